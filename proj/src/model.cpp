#include "fedvc/model.hpp"

#include <cmath>

namespace fedvc {

Prediction predict(const ParamSet& params, const ArchConfig& arch, const float* x, int n) {
  arch.validate();
  Tape tape;
  auto bound = bind_model(tape, params, /*requires_grad=*/false);
  Var xin = tape.input(Tensor({n, arch.input_dim}, std::vector<float>(x, x + (size_t)n * arch.input_dim)));
  auto out = forward_model(tape, bound, arch, xin);

  Prediction pred;
  pred.logits = tape.value(out.logits).data;
  pred.embed = tape.value(out.embed).data;
  pred.probs = tape.value(tape.softmax_rows(out.logits)).data;
  pred.argmax.resize(n);
  int c = arch.num_classes;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (pred.logits[(size_t)i * c + j] > pred.logits[(size_t)i * c + best]) best = j;
    pred.argmax[i] = best;
  }
  return pred;
}

}  // namespace fedvc
