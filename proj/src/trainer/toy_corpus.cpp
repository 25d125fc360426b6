#include "swtt/toy_corpus.hpp"

#include <array>
#include <cmath>

#include "swtt/random.hpp"

namespace swtt {

namespace {

struct Color {
    const char* name;
    std::array<std::uint8_t, 3> rgb;
};

constexpr std::array<Color, 4> kColors{{
    {"red", {230, 40, 40}},
    {"green", {40, 200, 60}},
    {"blue", {50, 70, 235}},
    {"yellow", {235, 215, 40}},
}};
constexpr std::array<const char*, 4> kShapes{"circle", "square", "triangle", "cross"};
constexpr std::array<std::uint8_t, 3> kBackground{24, 24, 32};

bool inside(std::size_t shape, double y, double x, double cy, double cx, double r) {
    const double dy = y - cy, dx = x - cx;
    switch (shape) {
        case 0: return dy * dy + dx * dx <= r * r;
        case 1: return std::abs(dy) <= r * 0.8 && std::abs(dx) <= r * 0.8;
        case 2: return dy >= -r && dy <= r * 0.8 && std::abs(dx) <= (dy + r) * 0.55;
        default: return (std::abs(dy) <= r * 0.3 && std::abs(dx) <= r) || (std::abs(dx) <= r * 0.3 && std::abs(dy) <= r);
    }
}

}  // namespace

std::vector<std::string> ToyCorpus::prompt_vocab() {
    std::vector<std::string> v{"<null>"};
    for (const Color& c : kColors) v.emplace_back(c.name);
    for (const char* s : kShapes) v.emplace_back(s);
    return v;
}

std::string ToyCorpus::resolve(const std::string& cond) const {
    const ToyExample* e = find(cond);
    return e ? e->prompt : cond;
}

const ToyExample* ToyCorpus::find(const std::string& cond) const {
    for (const ToyExample& e : examples)
        if (e.label == cond || e.prompt == cond) return &e;
    return nullptr;
}

ToyCorpus make_toy_corpus(std::uint64_t seed, std::size_t image_size) {
    ToyCorpus corpus;
    Rng rng(seed);
    const double n = static_cast<double>(image_size);
    for (std::size_t ci = 0; ci < kColors.size(); ++ci) {
        for (std::size_t si = 0; si < kShapes.size(); ++si) {
            ToyExample ex;
            ex.label = std::string(1, static_cast<char>('A' + ci * kShapes.size() + si));
            ex.prompt = std::string(kColors[ci].name) + " " + kShapes[si];
            const double cy = n / 2.0 + (rng.uniform() - 0.5) * n * 0.25;
            const double cx = n / 2.0 + (rng.uniform() - 0.5) * n * 0.25;
            const double r = n * (0.25 + 0.08 * rng.uniform());
            ex.image = Image{image_size, image_size, 3, std::vector<std::uint8_t>(image_size * image_size * 3)};
            for (std::size_t y = 0; y < image_size; ++y) {
                for (std::size_t x = 0; x < image_size; ++x) {
                    const bool in = inside(si, y + 0.5, x + 0.5, cy, cx, r);
                    for (std::size_t c = 0; c < 3; ++c) ex.image.at(y, x, c) = in ? kColors[ci].rgb[c] : kBackground[c];
                }
            }
            corpus.examples.push_back(std::move(ex));
        }
    }
    return corpus;
}

}  // namespace swtt
