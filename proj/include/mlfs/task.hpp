#pragma once

#include <cstddef>
#include <vector>

namespace mlfs {

enum class TaskKind { classify, char_lm };

// one minibatch of token sequences; targets hold one class id per sequence
// (classify) or one next-token id per position (char_lm)
struct Batch {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::size_t batch = 0;
    std::size_t seq = 0;
};

}  // namespace mlfs
