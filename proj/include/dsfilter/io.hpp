#pragma once

#include <filesystem>
#include <vector>

#include "dsfilter/grid.hpp"
#include "dsfilter/simulate.hpp"
#include "dsfilter/split_quad.hpp"

namespace dsf {

// Observation sequence: header t,y_0,..,y_{d'-1}; one row per t_{k,0}.
void write_observation_csv(const ObservationSequence& y, const TimeGrid& time, const std::filesystem::path& path);
// Checks the row count against K + 1 when `time` is given.
ObservationSequence read_observation_csv(const std::filesystem::path& path, const TimeGrid* time = nullptr);

// Single density: header x,value.
void write_density_csv(const GridDensity& d, const std::filesystem::path& path);
// The grid is recovered from the x column, which must be uniform.
GridDensity read_density_csv(const std::filesystem::path& path);

// Several densities on one grid: header k,n,t,x,value, index-major rows.
void write_density_long_csv(const DensityMap& densities, const TimeGrid& time, const std::filesystem::path& path);
DensityMap read_density_long_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace dsf
