#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "match2/core/tensor.hpp"

namespace match2 {

// Reverse-mode tape. Ops append records in execution order; backward() seeds
// the loss gradient and replays the records once, in reverse. Records hold
// handles to their operands so the graph stays alive for the replay.
// Single-writer: one tape belongs to one forward pass.
template <typename T>
class TapeT {
 public:
  struct Record {
    const char* op;
    std::vector<TensorT<T>> inputs;
    TensorT<T> output;
    std::function<void()> backward;
  };

  void record(const char* op, std::vector<TensorT<T>> inputs, TensorT<T> output,
              std::function<void()> backward) {
    records_.push_back(Record{op, std::move(inputs), std::move(output),
                              std::move(backward)});
  }

  // loss must be scalar. Leaf gradients accumulate additively; call
  // zero_grad on parameters between steps.
  void backward(TensorT<T> loss) {
    if (loss.numel() != 1)
      throw_error(ErrorCategory::kContract,
                  "backward requires a scalar loss, got shape " +
                      shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->backward) it->backward();
  }

  size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

enum class Mode { kTrain, kInfer };

}  // namespace match2
