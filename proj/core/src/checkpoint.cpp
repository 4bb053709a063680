#include "segdetail/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace segdetail {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need a swap");

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::string& dir, MiniPsp<float>& model) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto params = model.params();

    std::ofstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw DataError("cannot write checkpoint manifest in " + dir);
    man.precision(9);  // round-trip exact for float32
    man << "format=segdetail-checkpoint-v1\n";
    man << "num_classes=" << model.cfg.num_classes << "\n";
    man << "injection=" << to_string(model.cfg.injection) << "\n";
    man << "embed_width=" << model.cfg.embed_width << "\n";
    man << "encoder_channels=" << join(model.cfg.encoder_channels) << "\n";
    man << "ppm_bins=" << join(model.cfg.ppm_bins) << "\n";
    man << "encoder_downsample=" << model.cfg.encoder_downsample << "\n";
    man << "seed=" << model.cfg.seed << "\n";
    man << "norm_mean=" << model.norm_mean[0] << "," << model.norm_mean[1] << ","
        << model.norm_mean[2] << "\n";
    man << "norm_std=" << model.norm_std[0] << "," << model.norm_std[1] << ","
        << model.norm_std[2] << "\n";
    for (const auto& p : params)
        man << "param=" << p.path << " " << p.value->size() << "\n";

    for (const auto& p : params) {
        std::ofstream blob(fs::path(dir) / (p.path + ".bin"), std::ios::binary);
        if (!blob) throw DataError("cannot write checkpoint blob " + p.path + " in " + dir);
        blob.write(reinterpret_cast<const char*>(p.value->data()),
                   static_cast<std::streamsize>(p.value->size() * sizeof(float)));
    }
}

NetworkConfig load_checkpoint_config(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path man_path = fs::path(dir) / "manifest.txt";
    std::ifstream man(man_path);
    if (!man) throw ParseError("checkpoint manifest not found: " + man_path.string());

    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(man, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        if (key == "param") continue;
        kv[key] = line.substr(eq + 1);
    }
    if (kv["format"] != "segdetail-checkpoint-v1")
        throw ParseError(man_path.string() + ": unknown checkpoint format '" + kv["format"] + "'");

    NetworkConfig cfg;
    cfg.num_classes = std::stoi(kv.at("num_classes"));
    cfg.injection = parse_injection(kv.at("injection"));
    cfg.embed_width = std::stoi(kv.at("embed_width"));
    cfg.encoder_channels = parse_int_list(kv.at("encoder_channels"));
    cfg.ppm_bins = parse_int_list(kv.at("ppm_bins"));
    cfg.encoder_downsample = std::stoi(kv.at("encoder_downsample"));
    cfg.seed = static_cast<std::uint32_t>(std::stoul(kv.at("seed")));
    return cfg;
}

MiniPsp<float> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    MiniPsp<float> model(load_checkpoint_config(dir));

    std::ifstream man(fs::path(dir) / "manifest.txt");
    std::map<std::string, std::string> kv;
    std::string line;
    std::map<std::string, std::size_t> declared;
    while (std::getline(man, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        if (line.substr(0, eq) == "param") {
            std::stringstream ss(line.substr(eq + 1));
            std::string path;
            std::size_t count = 0;
            ss >> path >> count;
            declared[path] = count;
        } else {
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    {
        std::stringstream sm(kv.at("norm_mean")), sd(kv.at("norm_std"));
        std::string tok;
        for (int i = 0; i < 3; ++i) {
            std::getline(sm, tok, ',');
            model.norm_mean[i] = std::stof(tok);
            std::getline(sd, tok, ',');
            model.norm_std[i] = std::stof(tok);
        }
    }

    for (auto& p : model.params()) {
        const auto it = declared.find(p.path);
        if (it == declared.end())
            throw ConfigError("checkpoint " + dir + " missing parameter " + p.path);
        if (it->second != p.value->size())
            throw ConfigError("checkpoint " + dir + ": parameter " + p.path + " has " +
                              std::to_string(it->second) + " values, expected " +
                              std::to_string(p.value->size()));
        const fs::path blob_path = fs::path(dir) / (p.path + ".bin");
        std::ifstream blob(blob_path, std::ios::binary);
        if (!blob) throw ParseError("checkpoint blob not found: " + blob_path.string());
        blob.read(reinterpret_cast<char*>(p.value->data()),
                  static_cast<std::streamsize>(p.value->size() * sizeof(float)));
        if (blob.gcount() != static_cast<std::streamsize>(p.value->size() * sizeof(float)))
            throw ParseError(blob_path.string() + ": truncated at byte " +
                             std::to_string(blob.gcount()));
    }
    return model;
}

}  // namespace segdetail
