#include <algorithm>
#include <cmath>

#include "swtt/codec.hpp"
#include "swtt/errors.hpp"

namespace swtt {

ScaleSchedule::ScaleSchedule(std::vector<GridSize> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.empty()) throw ScheduleError("schedule must contain at least one scale");
    if (sizes_.front() != GridSize{1, 1}) throw ScheduleError("schedule must start at 1x1");
    for (std::size_t i = 1; i < sizes_.size(); ++i) {
        if (sizes_[i].h < sizes_[i - 1].h || sizes_[i].w < sizes_[i - 1].w) {
            throw ScheduleError("schedule shrinks at scale " + std::to_string(i + 1));
        }
    }
    offsets_.reserve(sizes_.size() + 1);
    for (const GridSize& g : sizes_) offsets_.push_back(offsets_.back() + g.area());
}

ScaleSchedule build_scale_schedule(std::size_t n_scales, GridSize final_size) {
    if (n_scales == 0 || final_size.h == 0 || final_size.w == 0) {
        throw ScheduleError("schedule needs n_scales >= 1 and a non-empty final size");
    }
    const std::size_t longer = std::max(final_size.h, final_size.w);
    const std::size_t shorter = std::min(final_size.h, final_size.w);
    if (n_scales > longer) {
        throw ScheduleError(std::to_string(n_scales) + " scales requested but only " + std::to_string(longer) +
                            " distinct sizes fit in " + std::to_string(final_size.h) + "x" +
                            std::to_string(final_size.w));
    }
    if (n_scales == 1) {
        if (longer != 1) throw ScheduleError("a single-scale schedule must be 1x1");
        return ScaleSchedule({{1, 1}});
    }

    std::vector<std::size_t> major(n_scales);
    const double last = static_cast<double>(n_scales - 1);
    for (std::size_t k = 0; k < n_scales; ++k) {
        const double g = std::pow(static_cast<double>(longer), static_cast<double>(k) / last);
        major[k] = static_cast<std::size_t>(std::llround(g));
        if (k > 0) major[k] = std::max(major[k], major[k - 1] + 1);
    }
    for (std::size_t k = 0; k < n_scales; ++k) major[k] = std::min(major[k], longer - (n_scales - 1 - k));

    std::vector<GridSize> sizes(n_scales);
    std::size_t prev_minor = 1;
    for (std::size_t k = 0; k < n_scales; ++k) {
        std::size_t minor = static_cast<std::size_t>(
            std::llround(static_cast<double>(major[k]) * static_cast<double>(shorter) / static_cast<double>(longer)));
        minor = std::clamp<std::size_t>(minor, prev_minor, shorter);
        if (k == 0) minor = 1;
        if (k + 1 == n_scales) minor = shorter;
        prev_minor = minor;
        sizes[k] = final_size.h >= final_size.w ? GridSize{major[k], minor} : GridSize{minor, major[k]};
    }
    return ScaleSchedule(std::move(sizes));
}

}  // namespace swtt
