// Small trained models and shifted domains shared by several suites.
#pragma once

#include <vector>

#include "adabn/dataset.hpp"
#include "adabn/model.hpp"
#include "adabn/trainer.hpp"

namespace fixture {

using namespace adabn;

inline std::vector<double> alternating(std::size_t dim, double magnitude) {
  std::vector<double> v(dim, magnitude);
  for (std::size_t i = 1; i < dim; i += 2) v[i] = -magnitude;
  return v;
}

inline ShiftSpec affine_shift(std::size_t dim, double magnitude = 3.0, double scale = 1.5) {
  ShiftSpec s;
  s.input_shift = alternating(dim, magnitude);
  s.input_scale = {scale};
  return s;
}

struct Blobs {
  DomainDataset source;
  DomainDataset target;
  Model model;  // trained on source, BN in eval mode
};

inline const Blobs& small_blobs() {
  static const Blobs b = [] {
    Blobs out;
    out.source = make_blobs(4, 150, 8, 4.0, 31, "source");
    out.target = shift_domain(make_blobs(4, 150, 8, 4.0, 32, "target"), affine_shift(8), "target");
    TrainConfig cfg;
    cfg.base_lr = 0.05;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.seed = 5;
    out.model = train(make_mlp(8, {16, 16}, 4, 9), out.source, cfg).model;
    return out;
  }();
  return b;
}

}  // namespace fixture
