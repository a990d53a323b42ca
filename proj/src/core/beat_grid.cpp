#include "beatflow/core/beat_grid.hpp"

#include <cmath>

namespace beatflow {

bool BeatGrid::is_regular(double tolerance) const
{
    for (std::size_t i = 1; i < beat_times.size(); ++i) {
        const double gap = beat_times[i] - beat_times[i - 1];
        if (gap <= 0.0) {
            return false;
        }
        if (tempo_bpm > 0.0 && std::abs(gap - period()) > tolerance * period()) {
            return false;
        }
    }
    return true;
}

}  // namespace beatflow
