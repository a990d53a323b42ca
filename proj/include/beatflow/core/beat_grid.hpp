#pragma once

#include <vector>

namespace beatflow {

/// Beat timestamps in seconds, ascending, with the tempo they were laid out at.
struct BeatGrid {
    std::vector<double> beat_times;
    double tempo_bpm = 0.0;

    [[nodiscard]] bool empty() const noexcept { return beat_times.empty(); }
    [[nodiscard]] double period() const { return 60.0 / tempo_bpm; }
    /// Strictly ascending with every gap within `tolerance` of the period.
    [[nodiscard]] bool is_regular(double tolerance = 0.2) const;
};

}  // namespace beatflow
