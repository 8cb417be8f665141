// SPDX-License-Identifier: Apache-2.0
#include "vsr/arch/shapes.hpp"

namespace vsr::arch {

namespace {

std::int64_t out_len(std::int64_t in, std::int64_t k, std::int64_t s,
                     std::int64_t p, std::int64_t d) {
  return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

}  // namespace

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  validate(spec);
  std::vector<Shape> shapes(spec.graph.nodes.size());

  auto input_of = [&](const Node& n, std::size_t which) -> const Shape& {
    if (n.inputs.empty()) return spec.input_shape;
    return shapes[static_cast<std::size_t>(n.inputs[which])];
  };

  for (std::size_t i = 0; i < spec.graph.nodes.size(); ++i) {
    const Node& n = spec.graph.nodes[i];
    const LayerSpec& s = n.spec;
    const std::string where = "node '" + n.name + "'";
    const Shape& in = input_of(n, 0);
    Shape out;

    switch (s.kind) {
      case LayerKind::conv3d: {
        require(in.size() == 4, where + " conv3d expects [C,T,H,W], got " + shape_str(in));
        require(in[0] == s.c_in, where + " conv3d c_in mismatch: spec " +
                                     std::to_string(s.c_in) + " vs input " +
                                     std::to_string(in[0]));
        out = {s.c_out,
               out_len(in[1], s.kernel[0], s.stride[0], s.padding[0], s.dilation[0]),
               out_len(in[2], s.kernel[1], s.stride[1], s.padding[1], s.dilation[1]),
               out_len(in[3], s.kernel[2], s.stride[2], s.padding[2], s.dilation[2])};
        break;
      }
      case LayerKind::conv2d: {
        require(in.size() == 4, where + " conv2d expects [C,T,H,W], got " + shape_str(in));
        require(in[0] == s.c_in, where + " conv2d c_in mismatch");
        out = {s.c_out, in[1],
               out_len(in[2], s.kernel[0], s.stride[0], s.padding[0], s.dilation[0]),
               out_len(in[3], s.kernel[1], s.stride[1], s.padding[1], s.dilation[1])};
        break;
      }
      case LayerKind::conv1d:
      case LayerKind::depthwise_conv:
      case LayerKind::pointwise_conv: {
        require(in.size() == 2, where + " temporal conv expects [C,T], got " + shape_str(in));
        require(in[0] == s.c_in, where + " temporal conv c_in mismatch: spec " +
                                     std::to_string(s.c_in) + " vs input " +
                                     std::to_string(in[0]));
        out = {s.c_out,
               out_len(in[1], s.kernel[0], s.stride[0], s.padding[0], s.dilation[0])};
        break;
      }
      case LayerKind::batchnorm: {
        require(!in.empty() && in[0] == s.c_in, where + " batchnorm channel mismatch");
        out = in;
        break;
      }
      case LayerKind::activation:
      case LayerKind::channel_shuffle: {
        out = in;
        if (s.kind == LayerKind::channel_shuffle)
          require(in[0] % s.shuffle_groups == 0,
                  where + " channels not divisible by shuffle groups");
        break;
      }
      case LayerKind::maxpool: {
        require(in.size() == 4, where + " maxpool expects [C,T,H,W]");
        out = in;
        if (s.kernel.size() == 3) {
          out[1] = out_len(in[1], s.kernel[0], s.stride[0], s.padding[0], 1);
          out[2] = out_len(in[2], s.kernel[1], s.stride[1], s.padding[1], 1);
          out[3] = out_len(in[3], s.kernel[2], s.stride[2], s.padding[2], 1);
        } else {
          out[2] = out_len(in[2], s.kernel[0], s.stride[0], s.padding[0], 1);
          out[3] = out_len(in[3], s.kernel[1], s.stride[1], s.padding[1], 1);
        }
        break;
      }
      case LayerKind::avgpool_global: {
        if (s.pool_axes == PoolAxes::spatial) {
          require(in.size() == 4, where + " spatial avgpool expects [C,T,H,W]");
          out = {in[0], in[1], 1, 1};
        } else {
          require(in.size() == 2, where + " temporal avgpool expects [C,T]");
          out = {in[0]};
        }
        break;
      }
      case LayerKind::reshape_fold_time: {
        require(in.size() == 4 && in[2] == 1 && in[3] == 1,
                where + " fold expects [C,T,1,1], got " + shape_str(in));
        out = {in[0], in[1]};
        break;
      }
      case LayerKind::linear: {
        require(in.size() == 1, where + " linear expects [F], got " + shape_str(in));
        require(in[0] == s.c_in, where + " linear F_in mismatch: spec " +
                                     std::to_string(s.c_in) + " vs input " +
                                     std::to_string(in[0]));
        out = {s.c_out};
        break;
      }
      case LayerKind::residual_add: {
        const Shape& rhs = input_of(n, 1);
        require(in == rhs, where + " residual_add shape mismatch: " +
                               shape_str(in) + " vs " + shape_str(rhs));
        out = in;
        break;
      }
      case LayerKind::concat_branches: {
        out = in;
        for (std::size_t b = 1; b < n.inputs.size(); ++b) {
          const Shape& rhs = input_of(n, b);
          require(rhs.size() == in.size(), where + " concat rank mismatch");
          for (std::size_t a = 1; a < in.size(); ++a)
            require(rhs[a] == in[a], where + " concat non-channel axis mismatch");
          out[0] += rhs[0];
        }
        break;
      }
    }
    for (auto d : out)
      require(d >= 1, where + " produced an empty axis: " + shape_str(out));
    shapes[i] = std::move(out);
  }
  return shapes;
}

}  // namespace vsr::arch
