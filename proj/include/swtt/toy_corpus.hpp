#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swtt/codec.hpp"
#include "swtt/image_io.hpp"

namespace swtt {

// 16 procedurally drawn images: 4 colors x 4 shapes. Each has a class label
// ("A".."P") and a two-word prompt such as "red circle".
struct ToyExample {
    std::string label;
    std::string prompt;
    Image image;
};

struct ToyCorpus {
    std::vector<ToyExample> examples;

    // "<null>", the 4 colors, then the 4 shapes.
    static std::vector<std::string> prompt_vocab();
    // Class labels map to their prompt; anything else is returned unchanged.
    std::string resolve(const std::string& cond) const;
    const ToyExample* find(const std::string& cond) const;
};

ToyCorpus make_toy_corpus(std::uint64_t seed, std::size_t image_size = 16);

}  // namespace swtt
