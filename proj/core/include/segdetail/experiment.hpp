#pragma once

// Sweep harness emitting the benchmark table analogs (dataset-size,
// resolution, injection-location, embedding-width studies) with per-seed rows
// and mean/stddev aggregation. Finished rows are persisted and reruns skip
// them, so a completed sweep is a no-op to repeat.

#include <cstdint>
#include <string>
#include <vector>

#include "segdetail/data.hpp"
#include "segdetail/eval.hpp"
#include "segdetail/network.hpp"
#include "segdetail/train.hpp"

namespace segdetail {

struct ExperimentPlan {
    std::vector<int> dataset_sizes = {10, 25, 50};
    std::vector<int> resolutions = {48, 96};
    std::vector<InjectionPoint> injections = {InjectionPoint::BeforePool,
                                              InjectionPoint::AfterPool,
                                              InjectionPoint::AfterFinal};
    std::vector<int> embed_widths = {19, 64};
    std::vector<std::uint32_t> seeds = {1, 2, 3};
    int val_size = 50;
    NetworkConfig base_net;     // injection/embed overridden per row
    TrainConfig base_train;     // seed overridden per row
    SceneSpec scene;            // canvas overridden per resolution
    CoarsenSpec coarsen;
    std::string out_dir;

    void validate() const;
};

/// Runs every row of the plan and writes table1.csv (size study),
/// table3.csv (resolution study), table4.csv (injection study) and
/// table5.csv (embedding-width study) under out_dir, plus per-row files in
/// out_dir/rows/ and a sweep manifest.
void run_sweep(const ExperimentPlan& plan);

}  // namespace segdetail
