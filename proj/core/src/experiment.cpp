#include "segdetail/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace segdetail {

namespace fs = std::filesystem;
using json = nlohmann::json;

void ExperimentPlan::validate() const {
    if (dataset_sizes.empty() || resolutions.empty() || injections.empty() ||
        embed_widths.empty() || seeds.empty())
        throw ConfigError("ExperimentPlan: all axis lists must be nonempty");
    std::vector<std::uint32_t> s = seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end())
        throw ConfigError("ExperimentPlan: seeds must be distinct");
    if (val_size < 1) throw ConfigError("ExperimentPlan: val_size must be >= 1");
    if (out_dir.empty()) throw ConfigError("ExperimentPlan: out_dir empty");
    for (const InjectionPoint i : injections)
        if (i == InjectionPoint::None)
            throw ConfigError("ExperimentPlan: injection sweep covers detailer variants only");
}

namespace {

// Writes `content` atomically (write-then-rename).
void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

struct RowSpec {
    std::string table;    // table1 | table3 | table4 | table5
    std::string axis;     // e.g. "size=10,model=detailer"
    std::uint32_t seed;
    // full run description
    int size = 0;
    int resolution = 0;
    ModelKind kind = ModelKind::Detailer;
    InjectionPoint injection = InjectionPoint::AfterFinal;
    int embed_width = 0;

    std::string file_name() const {
        std::string a = axis;
        std::replace(a.begin(), a.end(), '=', '-');
        std::replace(a.begin(), a.end(), ',', '_');
        return table + "__" + a + "__s" + std::to_string(seed) + ".csv";
    }
};

class DatasetCache {
public:
    DatasetCache(const ExperimentPlan& plan) : plan_(plan) {}

    const Dataset& train_set(int size, int resolution, std::uint32_t seed) {
        const std::string key = "t:" + std::to_string(size) + ":" +
                                std::to_string(resolution) + ":" + std::to_string(seed);
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            SceneSpec scene = plan_.scene;
            scene.height = scene.width = resolution;
            it = cache_.emplace(key, generate_dataset(scene, plan_.coarsen, size,
                                                      derive_seed(seed, resolution)))
                     .first;
        }
        return it->second;
    }

    // Validation split is fixed per resolution (shared across seeds).
    const Dataset& val_set(int resolution) {
        const std::string key = "v:" + std::to_string(resolution);
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            SceneSpec scene = plan_.scene;
            scene.height = scene.width = resolution;
            it = cache_.emplace(key, generate_dataset(scene, plan_.coarsen, plan_.val_size,
                                                      derive_seed(0x5eed, resolution)))
                     .first;
        }
        return it->second;
    }

private:
    const ExperimentPlan& plan_;
    std::map<std::string, Dataset> cache_;
};

double run_row(const ExperimentPlan& plan, DatasetCache& cache, const RowSpec& row) {
    NetworkConfig net = plan.base_net;
    net.injection = row.kind == ModelKind::Classifier ? InjectionPoint::None : row.injection;
    net.embed_width = row.embed_width > 0 ? row.embed_width : plan.base_net.embed_width;
    net.seed = row.seed;

    TrainConfig tc = plan.base_train;
    tc.seed = row.seed;
    tc.crop = std::min(tc.crop, row.resolution);

    const Dataset& train_ds = cache.train_set(row.size, row.resolution, row.seed);
    const Dataset& val_ds = cache.val_set(row.resolution);

    MiniPsp<float> model(net);
    train(row.kind, model, train_ds, nullptr, tc);
    return evaluate_model(model, val_ds, row.kind == ModelKind::Detailer, false).miou;
}

std::string aggregate_table(const std::string& header,
                            const std::vector<std::pair<std::string, std::vector<std::pair<std::uint32_t, double>>>>& groups) {
    std::ostringstream out;
    out.precision(17);
    out << header << "\n";
    for (const auto& [axis, rows] : groups) {
        double sum = 0.0, sq = 0.0;
        for (const auto& [seed, miou] : rows) {
            out << axis << ",seed-" << seed << "," << miou << "\n";
            sum += miou;
            sq += miou * miou;
        }
        const double n = static_cast<double>(rows.size());
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        out << axis << ",mean," << mean << "\n";
        out << axis << ",stddev," << std::sqrt(var) << "\n";
    }
    return out.str();
}

}  // namespace

void run_sweep(const ExperimentPlan& plan) {
    plan.validate();
    fs::create_directories(fs::path(plan.out_dir) / "rows");
    DatasetCache cache(plan);

    // Manifest of the exact plan, for reproducibility audits.
    {
        json m;
        m["dataset_sizes"] = plan.dataset_sizes;
        m["resolutions"] = plan.resolutions;
        json inj = json::array();
        for (const auto i : plan.injections) inj.push_back(to_string(i));
        m["injections"] = inj;
        m["embed_widths"] = plan.embed_widths;
        m["seeds"] = plan.seeds;
        m["val_size"] = plan.val_size;
        m["train"] = {{"base_lr", plan.base_train.base_lr},
                      {"poly_power", plan.base_train.poly_power},
                      {"momentum", plan.base_train.momentum},
                      {"batch_size", plan.base_train.batch_size},
                      {"total_iters", plan.base_train.total_iters},
                      {"crop", plan.base_train.crop}};
        m["net"] = {{"num_classes", plan.base_net.num_classes},
                    {"embed_width", plan.base_net.embed_width},
                    {"encoder_channels", plan.base_net.encoder_channels},
                    {"ppm_bins", plan.base_net.ppm_bins},
                    {"encoder_downsample", plan.base_net.encoder_downsample}};
        atomic_write(fs::path(plan.out_dir) / "sweep_manifest.json", m.dump(2) + "\n");
    }

    std::vector<RowSpec> rows;
    const int res0 = plan.resolutions.front();
    const int ablation_size = *std::max_element(plan.dataset_sizes.begin(),
                                                plan.dataset_sizes.end());
    for (const std::uint32_t seed : plan.seeds) {
        for (const int size : plan.dataset_sizes)
            for (const ModelKind kind : {ModelKind::Detailer, ModelKind::Classifier}) {
                RowSpec r;
                r.table = "table1";
                r.axis = "size=" + std::to_string(size) + ",model=" + to_string(kind);
                r.seed = seed;
                r.size = size;
                r.resolution = res0;
                r.kind = kind;
                rows.push_back(r);
            }
        for (const int res : plan.resolutions)
            for (const int size : plan.dataset_sizes) {
                RowSpec r;
                r.table = "table3";
                r.axis = "resolution=" + std::to_string(res) + ",size=" + std::to_string(size);
                r.seed = seed;
                r.size = size;
                r.resolution = res;
                rows.push_back(r);
            }
        for (const InjectionPoint inj : plan.injections) {
            RowSpec r;
            r.table = "table4";
            r.axis = "injection=" + to_string(inj);
            r.seed = seed;
            r.size = ablation_size;
            r.resolution = res0;
            r.injection = inj;
            rows.push_back(r);
        }
        for (const int width : plan.embed_widths) {
            RowSpec r;
            r.table = "table5";
            r.axis = "embed_width=" + std::to_string(width);
            r.seed = seed;
            r.size = ablation_size;
            r.resolution = res0;
            r.embed_width = width;
            rows.push_back(r);
        }
    }

    // axis -> [(seed, miou)] per table, in plan order.
    std::map<std::string, std::vector<std::pair<std::string, std::vector<std::pair<std::uint32_t, double>>>>> tables;
    auto record = [&tables](const RowSpec& r, double miou_value) {
        auto& groups = tables[r.table];
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&r](const auto& g) { return g.first == r.axis; });
        if (it == groups.end()) {
            groups.push_back({r.axis, {}});
            it = std::prev(groups.end());
        }
        it->second.push_back({r.seed, miou_value});
    };

    for (const auto& row : rows) {
        const fs::path row_path = fs::path(plan.out_dir) / "rows" / row.file_name();
        double miou_value = 0.0;
        if (fs::exists(row_path)) {
            std::ifstream in(row_path);
            std::string header, line;
            std::getline(in, header);
            std::getline(in, line);
            miou_value = std::stod(line.substr(line.rfind(',') + 1));
        } else {
            try {
                miou_value = run_row(plan, cache, row);
            } catch (const std::exception& e) {
                // Partial failure: record it and keep sweeping.
                atomic_write(fs::path(plan.out_dir) / "rows" / (row.file_name() + ".failed"),
                             std::string(e.what()) + "\n");
                continue;
            }
            std::ostringstream content;
            content.precision(17);
            content << "table,axis,seed,miou\n"
                    << row.table << ",\"" << row.axis << "\"," << row.seed << ","
                    << miou_value << "\n";
            atomic_write(row_path, content.str());
        }
        record(row, miou_value);
    }

    const std::map<std::string, std::string> headers = {
        {"table1", "size,model,stat,miou"},
        {"table3", "resolution,size,stat,miou"},
        {"table4", "injection,stat,miou"},
        {"table5", "embed_width,stat,miou"}};
    for (const auto& [table, groups] : tables) {
        std::vector<std::pair<std::string, std::vector<std::pair<std::uint32_t, double>>>> cleaned;
        for (const auto& [axis, rows_in] : groups) {
            // axis "a=1,b=2" -> CSV prefix "1,2"
            std::string prefix;
            std::stringstream ss(axis);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                if (!prefix.empty()) prefix += ',';
                prefix += tok.substr(tok.find('=') + 1);
            }
            cleaned.push_back({prefix, rows_in});
        }
        atomic_write(fs::path(plan.out_dir) / (table + ".csv"),
                     aggregate_table(headers.at(table), cleaned));
    }
}

}  // namespace segdetail
