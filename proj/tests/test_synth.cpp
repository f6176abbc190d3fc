#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "rgen/labeler.hpp"
#include "rgen/synth.hpp"

using namespace rgen;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double region_mean(const Sample& sample, const Region& region, const GeneratorConfig& config) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = region.row0; r <= region.row1; ++r) {
    for (std::size_t c = region.col0; c <= region.col1; ++c) {
      const std::size_t base = (r * config.grid_w + c) * config.grid_c;
      for (std::size_t ch = 0; ch < config.grid_c; ++ch) {
        total += sample.image.data()[base + ch];
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("zero prevalence produces only normal studies over pure noise") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 40;
  for (auto& [id, p] : config.prevalences) p = 0.0;
  const auto samples = generate(config, default_ontology());
  REQUIRE(samples.size() == 40);
  for (const Sample& s : samples) {
    CHECK(s.report == kNormalSentence);
    CHECK(s.labels.empty());
  }
}

TEST_CASE("prevalence one plants the blob and the phrase in every sample") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 30;
  for (auto& [id, p] : config.prevalences) p = 0.0;
  config.prevalences["cardiomegaly"] = 1.0;
  const auto samples = generate(config, default_ontology());
  const FindingOntology ontology = default_ontology();
  const Region region = default_finding_regions().at("cardiomegaly");
  for (const Sample& s : samples) {
    CHECK(s.labels == std::vector<std::string>{"cardiomegaly"});
    CHECK(label_report(s.report, ontology) == std::set<std::string>{"cardiomegaly"});
    CHECK(region_mean(s, region, config) > 0.5);  // blob amplitude 1.0 over noise
  }
}

TEST_CASE("generation is bit-identical for a fixed seed") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 25;
  const auto a = generate(config, default_ontology());
  const auto b = generate(config, default_ontology());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].report == b[i].report);
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].image.data() == b[i].image.data());
  }
}

TEST_CASE("different seeds change the corpus") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 10;
  const auto a = generate(config, default_ontology());
  config.seed = 2;
  const auto b = generate(config, default_ontology());
  bool any_difference = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].image.data() != b[i].image.data()) any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("labeling a generated report recovers the planted label set") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 300;
  const FindingOntology ontology = default_ontology();
  const auto samples = generate(config, ontology);
  for (const Sample& s : samples) {
    const std::set<std::string> expected(s.labels.begin(), s.labels.end());
    CHECK(label_report(s.report, ontology) == expected);
  }
}

TEST_CASE("a probe on blob-region intensity separates every finding") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 400;
  const auto samples = generate(config, default_ontology());
  const auto regions = default_finding_regions();

  for (const auto& [finding_id, region] : regions) {
    // threshold fitted on the first half, scored on the second half
    double pos_sum = 0, neg_sum = 0;
    std::size_t pos_n = 0, neg_n = 0;
    for (std::size_t i = 0; i < 200; ++i) {
      const bool present = std::count(samples[i].labels.begin(), samples[i].labels.end(),
                                      finding_id) > 0;
      const double mean = region_mean(samples[i], region, config);
      if (present) {
        pos_sum += mean;
        ++pos_n;
      } else {
        neg_sum += mean;
        ++neg_n;
      }
    }
    if (pos_n == 0) continue;  // extremely unlikely at these prevalences
    const double threshold = 0.5 * (pos_sum / pos_n + neg_sum / neg_n);

    std::size_t correct = 0;
    for (std::size_t i = 200; i < 400; ++i) {
      const bool present = std::count(samples[i].labels.begin(), samples[i].labels.end(),
                                      finding_id) > 0;
      const bool predicted = region_mean(samples[i], region, config) > threshold;
      if (present == predicted) ++correct;
    }
    CHECK(static_cast<double>(correct) / 200.0 > 0.95);
  }
}

TEST_CASE("split respects ratios exactly on round numbers") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 100;
  const auto samples = generate(config, default_ontology());
  const SplitResult result = split(samples, 0.8, 0.1, 0.1, 7);
  CHECK(result.train.size() == 80);
  CHECK(result.val.size() == 10);
  CHECK(result.test.size() == 10);

  std::set<std::string> ids;
  for (const auto& s : result.train) ids.insert(s.id);
  for (const auto& s : result.val) ids.insert(s.id);
  for (const auto& s : result.test) ids.insert(s.id);
  CHECK(ids.size() == 100);  // disjoint and exhaustive
}

TEST_CASE("split sizes stay within one of the requested ratios") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 101;
  const auto samples = generate(config, default_ontology());
  const SplitResult result = split(samples, 0.8, 0.1, 0.1, 7);
  CHECK(result.train.size() + result.val.size() + result.test.size() == 101);
  CHECK(std::abs(static_cast<double>(result.train.size()) - 80.8) <= 1.0);
  CHECK(std::abs(static_cast<double>(result.val.size()) - 10.1) <= 1.0);
  CHECK(std::abs(static_cast<double>(result.test.size()) - 10.1) <= 1.0);
}

TEST_CASE("split is deterministic in its seed and rejects bad ratios") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 30;
  const auto samples = generate(config, default_ontology());
  const SplitResult a = split(samples, 0.8, 0.1, 0.1, 9);
  const SplitResult b = split(samples, 0.8, 0.1, 0.1, 9);
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);
  CHECK_THROWS_AS(split(samples, 0.5, 0.1, 0.1, 9), std::invalid_argument);
}

TEST_CASE("overlapping finding regions are an ontology layout error") {
  GeneratorConfig config = default_generator_config();
  config.regions = default_finding_regions();
  config.regions["edema"] = {3, 3, 4, 4};  // collides with cardiomegaly
  try {
    generate(config, default_ontology());
    FAIL("expected a layout error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("ontology layout error") != std::string::npos);
  }
}

TEST_CASE("regions that fall outside the grid are a layout error") {
  GeneratorConfig config = default_generator_config();
  config.grid_h = 2;
  config.grid_w = 2;
  CHECK_THROWS_AS(generate(config, default_ontology()), std::invalid_argument);
}

TEST_CASE("dataset files round-trip") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 12;
  const auto samples = generate(config, default_ontology());
  const std::string path = temp_path("rgen_dataset.jsonl");
  save_dataset(path, samples);
  const auto loaded = load_dataset(path);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].report == samples[i].report);
    CHECK(loaded[i].labels == samples[i].labels);
    CHECK(loaded[i].image.shape() == samples[i].image.shape());
    CHECK(loaded[i].image.data() == samples[i].image.data());
  }
}

TEST_CASE("a single template variant removes lexical diversity") {
  GeneratorConfig config = default_generator_config();
  config.n_samples = 60;
  config.template_variants = 1;
  for (auto& [id, p] : config.prevalences) p = 0.0;
  config.prevalences["edema"] = 1.0;
  const auto samples = generate(config, default_ontology());
  const std::string only = default_templates().at("edema")[0];
  for (const Sample& s : samples) CHECK(s.report == only);

  config.template_variants = 0;
  CHECK_THROWS_AS(generate(config, default_ontology()), std::invalid_argument);
}

TEST_CASE("missing prevalence entries are rejected") {
  GeneratorConfig config = default_generator_config();
  config.prevalences.erase("edema");
  CHECK_THROWS_AS(generate(config, default_ontology()), std::invalid_argument);
  config = default_generator_config();
  config.prevalences["edema"] = 1.5;
  CHECK_THROWS_AS(generate(config, default_ontology()), std::invalid_argument);
}
