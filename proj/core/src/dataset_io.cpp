#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "mstl/errors.hpp"
#include "mstl/phantom.hpp"

namespace mstl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stem_for(std::size_t i) { return fmt::format("{:06d}", i); }

json spec_to_json(const PhantomSpec& spec) {
  json probs = json::object();
  for (const auto& [label, p] : spec.lesion_probability_by_label) probs[std::to_string(label)] = p;
  return json{{"kind", std::string(kind_name(spec.kind))},
              {"image_size", spec.image_size},
              {"lesion_probability_by_label", probs},
              {"lobe_intensity_profile", spec.lobe_intensity_profile},
              {"noise_sigma", spec.noise_sigma},
              {"seed", spec.seed},
              {"split_fractions", spec.split_fractions}};
}

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec spec = PhantomSpec::defaults(parse_kind(j.at("kind").get<std::string>()));
  spec.image_size = j.at("image_size").get<std::size_t>();
  spec.lesion_probability_by_label.clear();
  for (const auto& [key, value] : j.at("lesion_probability_by_label").items()) {
    spec.lesion_probability_by_label[std::stoi(key)] = value.get<double>();
  }
  spec.lobe_intensity_profile = j.at("lobe_intensity_profile").get<std::array<double, kNumLobes>>();
  spec.noise_sigma = j.at("noise_sigma").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
  return spec;
}

}  // namespace

void save_dataset(const fs::path& dir, const LabeledDataset& dataset) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (!ec) fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  std::ofstream labels(dir / "labels.csv", std::ios::binary);
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  labels << "filename,label,split\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string name = stem_for(i) + ".pgm";
    write_pgm(dir / "images" / name, dataset.images[i]);
    if (i < dataset.lung_masks.size()) write_pgm(dir / "masks" / name, dataset.lung_masks[i]);
    labels << name << ',' << dataset.labels[i] << ',' << split_name(dataset.splits[i]) << '\n';
  }
  if (!labels) throw IoError("failed writing labels.csv");

  json meta = {{"spec", spec_to_json(dataset.spec)},
               {"seed", dataset.spec.seed},
               {"num_classes", dataset.num_classes},
               {"size", dataset.size()}};
  std::ofstream out(dir / "meta.json", std::ios::binary);
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("failed writing meta.json");
}

LabeledDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  LabeledDataset ds;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw IoError("missing meta.json in " + dir.string());
    try {
      const json meta = json::parse(in);
      ds.spec = spec_from_json(meta.at("spec"));
      ds.num_classes = meta.at("num_classes").get<std::size_t>();
    } catch (const json::exception& e) {
      throw IoError(fmt::format("malformed meta.json: {}", e.what()));
    }
  }

  std::ifstream in(dir / "labels.csv");
  if (!in) throw IoError("missing labels.csv in " + dir.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("filename,label,split", 0) != 0) {
    throw IoError("labels.csv: bad header");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, label, split;
    if (!std::getline(ss, name, ',') || !std::getline(ss, label, ',') || !std::getline(ss, split)) {
      throw IoError(fmt::format("labels.csv:{}: expected 3 columns", row));
    }
    int value = 0;
    try {
      std::size_t used = 0;
      value = std::stoi(label, &used);
      if (used != label.size()) throw std::invalid_argument(label);
    } catch (const std::exception&) {
      throw IoError(fmt::format("labels.csv:{}: bad label '{}'", row, label));
    }
    ds.images.push_back(read_pgm(dir / "images" / name));
    const fs::path mask_path = dir / "masks" / name;
    ds.lung_masks.push_back(fs::exists(mask_path) ? read_pgm_mask(mask_path) : Mask());
    ds.labels.push_back(value);
    try {
      ds.splits.push_back(parse_split(split));
    } catch (const ConfigError&) {
      throw IoError(fmt::format("labels.csv:{}: bad split '{}'", row, split));
    }
  }
  return ds;
}

}  // namespace mstl
