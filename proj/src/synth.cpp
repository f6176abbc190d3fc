#include "rgen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rgen {

const std::string kNormalSentence = "no acute cardiopulmonary process .";

GeneratorConfig default_generator_config() {
  GeneratorConfig config;
  config.prevalences = {
      {"cardiomegaly", 0.25}, {"edema", 0.20},           {"consolidation", 0.05},
      {"atelectasis", 0.25},  {"pleural_effusion", 0.30},
  };
  return config;
}

std::map<std::string, Region> default_finding_regions() {
  // 2x2 blocks, equal area, pairwise disjoint with gaps
  return {
      {"cardiomegaly", {3, 3, 4, 4}},  {"edema", {0, 0, 1, 1}},
      {"consolidation", {0, 5, 1, 6}}, {"atelectasis", {5, 0, 6, 1}},
      {"pleural_effusion", {5, 5, 6, 6}},
  };
}

std::map<std::string, std::vector<std::string>> default_templates() {
  return {
      {"cardiomegaly",
       {"there is moderate cardiomegaly .", "an enlarged cardiac silhouette is seen .",
        "the heart is enlarged in size ."}},
      {"edema",
       {"mild pulmonary edema is noted .", "there is vascular congestion with interstitial markings .",
        "findings consistent with pulmonary edema ."}},
      {"consolidation",
       {"there is focal consolidation in the right lower lobe .",
        "a patchy airspace opacity is present .", "focal consolidation is identified ."}},
      {"atelectasis",
       {"bibasilar atelectasis is noted .", "there is left basilar atelectasis .",
        "minor volume loss is seen at the bases ."}},
      {"pleural_effusion",
       {"a small pleural effusion is present .",
        "blunting of the costophrenic angle suggests fluid .",
        "there is a moderate right pleural effusion ."}},
  };
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void check_layout(const GeneratorConfig& config, const FindingOntology& ontology,
                  const std::map<std::string, Region>& regions,
                  const std::map<std::string, std::vector<std::string>>& templates) {
  for (const Finding& f : ontology.findings) {
    if (!config.prevalences.count(f.id)) {
      throw std::invalid_argument("generator: no prevalence configured for finding '" + f.id +
                                  "'");
    }
    if (!regions.count(f.id)) {
      throw std::invalid_argument("generator: no region configured for finding '" + f.id + "'");
    }
    if (!templates.count(f.id) || templates.at(f.id).empty()) {
      throw std::invalid_argument("generator: no templates configured for finding '" + f.id +
                                  "'");
    }
  }
  for (const auto& [id, p] : config.prevalences) {
    if (p < 0.0 || p > 1.0) {
      throw std::invalid_argument("generator: prevalence for '" + id + "' outside [0,1]");
    }
    if (ontology.find(id) == nullptr) {
      throw std::invalid_argument("generator: prevalence for unknown finding '" + id + "'");
    }
  }
  if (config.template_variants < 1) {
    throw std::invalid_argument("generator: template_variants must be >= 1");
  }
  // regions must fit the grid and be pairwise disjoint
  std::vector<std::pair<std::string, Region>> placed;
  for (const Finding& f : ontology.findings) {
    const Region& region = regions.at(f.id);
    if (region.row1 < region.row0 || region.col1 < region.col0 ||
        region.row1 >= config.grid_h || region.col1 >= config.grid_w) {
      throw std::invalid_argument("generator: region for '" + f.id +
                                  "' does not fit the feature grid (ontology layout error)");
    }
    for (const auto& [other_id, other] : placed) {
      const bool row_overlap = region.row0 <= other.row1 && other.row0 <= region.row1;
      const bool col_overlap = region.col0 <= other.col1 && other.col0 <= region.col1;
      if (row_overlap && col_overlap) {
        throw std::invalid_argument("generator: regions for '" + f.id + "' and '" + other_id +
                                    "' overlap (ontology layout error)");
      }
    }
    placed.emplace_back(f.id, region);
  }
}

}  // namespace

std::vector<Sample> generate(const GeneratorConfig& config, const FindingOntology& ontology) {
  const auto regions = config.regions.empty() ? default_finding_regions() : config.regions;
  const auto templates = default_templates();
  check_layout(config, ontology, regions, templates);

  std::vector<Sample> samples;
  samples.reserve(config.n_samples);
  const std::size_t cells = config.grid_h * config.grid_w * config.grid_c;

  for (std::size_t index = 0; index < config.n_samples; ++index) {
    Rng rng(mix_seed(config.seed, index));
    Sample sample;
    char id[16];
    std::snprintf(id, sizeof id, "s%05zu", index);
    sample.id = id;

    std::vector<std::string> present;
    for (const Finding& f : ontology.findings) {
      if (rng.uniform() < config.prevalences.at(f.id)) present.push_back(f.id);
    }

    sample.image = Tensor::zeros({config.grid_h, config.grid_w, config.grid_c});
    for (std::size_t i = 0; i < cells; ++i) {
      sample.image.data()[i] = rng.gaussian() * config.noise_amplitude;
    }
    for (const std::string& id_present : present) {
      const Region& region = regions.at(id_present);
      for (std::size_t r = region.row0; r <= region.row1; ++r) {
        for (std::size_t c = region.col0; c <= region.col1; ++c) {
          const std::size_t base = (r * config.grid_w + c) * config.grid_c;
          for (std::size_t ch = 0; ch < config.grid_c; ++ch) {
            sample.image.data()[base + ch] += config.blob_amplitude;
          }
        }
      }
    }

    std::vector<std::string> sentences;
    for (const std::string& id_present : present) {
      const auto& variants = templates.at(id_present);
      const std::size_t usable = std::min(config.template_variants, variants.size());
      sentences.push_back(variants[rng.bounded(usable)]);
    }
    rng.shuffle(sentences);
    if (sentences.empty()) sentences.push_back(kNormalSentence);

    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (i) sample.report += ' ';
      sample.report += sentences[i];
    }
    sample.labels = std::move(present);
    samples.push_back(std::move(sample));
  }
  return samples;
}

SplitResult split(const std::vector<Sample>& samples, double train_ratio, double val_ratio,
                  double test_ratio, std::uint64_t seed) {
  const double total = train_ratio + val_ratio + test_ratio;
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split: ratios must be non-negative and sum to 1");
  }
  const std::size_t n = samples.size();

  // largest-remainder apportionment, remainder ties resolved train > val > test
  const double exact[3] = {train_ratio * static_cast<double>(n),
                           val_ratio * static_cast<double>(n),
                           test_ratio * static_cast<double>(n)};
  std::size_t sizes[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(exact[i] + 1e-9));
    remainders[i] = exact[i] - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (remainders[i] > remainders[best] + 1e-12) best = i;
    }
    ++sizes[best];
    remainders[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);

  SplitResult result;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i) result.train.push_back(samples[idx[cursor++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i) result.val.push_back(samples[idx[cursor++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i) result.test.push_back(samples[idx[cursor++]]);
  return result;
}

void save_dataset(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  for (const Sample& sample : samples) {
    nlohmann::json record = {
        {"id", sample.id},
        {"features",
         {{"extents", sample.image.shape()}, {"data", sample.image.data()}}},
        {"report", sample.report},
        {"labels", sample.labels},
    };
    out << record.dump() << "\n";
  }
  if (!out) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json record = nlohmann::json::parse(line);
      Sample sample;
      sample.id = record.at("id").get<std::string>();
      auto extents = record.at("features").at("extents").get<std::vector<std::size_t>>();
      auto data = record.at("features").at("data").get<std::vector<double>>();
      sample.image = Tensor::from_data(std::move(extents), std::move(data));
      sample.report = record.at("report").get<std::string>();
      sample.labels = record.at("labels").get<std::vector<std::string>>();
      samples.push_back(std::move(sample));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return samples;
}

}  // namespace rgen
