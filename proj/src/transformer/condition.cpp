#include <cmath>
#include <sstream>

#include "swtt/errors.hpp"
#include "swtt/model.hpp"
#include "swtt/ops.hpp"

namespace swtt {

Tensor crop_fourier_features(const CropCoords& crop, GridSize canvas) {
    constexpr double kPi = 3.14159265358979323846;
    Tensor f({1, kCropFeatures});
    const double coords[2] = {crop.top / static_cast<double>(canvas.h), crop.left / static_cast<double>(canvas.w)};
    std::size_t o = 0;
    for (double u : coords) {
        for (std::size_t k = 0; k < kCropFrequencies; ++k) f[o++] = std::sin(kPi * std::ldexp(1.0, static_cast<int>(k)) * u);
        for (std::size_t k = 0; k < kCropFrequencies; ++k) f[o++] = std::cos(kPi * std::ldexp(1.0, static_cast<int>(k)) * u);
    }
    return f;
}

std::vector<std::size_t> Model::tokenize(const std::string& prompt) const {
    std::istringstream is(prompt);
    std::vector<std::size_t> ids;
    std::string word;
    const auto& vocab = config_.prompt_vocab;
    while (is >> word) {
        std::size_t id = vocab.size();
        for (std::size_t i = 1; i < vocab.size(); ++i) {
            if (vocab[i] == word) {
                id = i;
                break;
            }
        }
        if (id == vocab.size()) throw UsageError("unknown prompt symbol '" + word + "'");
        ids.push_back(id);
    }
    if (ids.empty()) throw UsageError("empty prompt");
    return ids;
}

ConditionBundle Model::encode_condition(std::span<const std::size_t> ids, std::optional<CropCoords> crop) const {
    if (ids.empty()) throw UsageError("condition needs at least one token");
    ConditionBundle c;
    c.ids.assign(ids.begin(), ids.end());
    c.tokens = ops::embedding(prompt_table_, ids);
    c.pooled = ops::mean_rows(c.tokens);
    c.crop = crop;
    return c;
}

ConditionBundle Model::encode_prompt(const std::string& prompt, std::optional<CropCoords> crop) const {
    const auto ids = tokenize(prompt);
    return encode_condition(ids, crop);
}

ConditionBundle Model::null_condition() const {
    const std::size_t null_id = 0;
    return encode_condition(std::span<const std::size_t>(&null_id, 1));
}

}  // namespace swtt
