#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rgen/labeler.hpp"
#include "rgen/trainer.hpp"

namespace rgen {

// Inclusive cell rectangle in the feature grid.
struct Region {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r <= row1 && c >= col0 && c <= col1;
  }
  std::size_t cells() const { return (row1 - row0 + 1) * (col1 - col0 + 1); }
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t n_samples = 100;
  std::size_t grid_h = 7, grid_w = 7, grid_c = 16;
  std::map<std::string, double> prevalences;  // finding id -> Bernoulli probability
  std::size_t template_variants = 3;          // lexical variants drawn per finding (1..3)
  double blob_amplitude = 1.0;
  double noise_amplitude = 0.3;
  std::map<std::string, Region> regions;  // empty -> default_finding_regions()
};

GeneratorConfig default_generator_config();

// disjoint spatial signatures, one per finding
std::map<std::string, Region> default_finding_regions();

// three lexical variants per finding; each contains exactly one ontology phrase
std::map<std::string, std::vector<std::string>> default_templates();

// emitted when a sample has no findings
extern const std::string kNormalSentence;

// Each sample: Bernoulli finding set, per-finding blobs over disjoint regions
// plus Gaussian noise, and a report of one seeded template sentence per
// present finding in seeded shuffled order. Pure given (seed, index).
std::vector<Sample> generate(const GeneratorConfig& config, const FindingOntology& ontology);

struct SplitResult {
  std::vector<Sample> train, val, test;
};

// seeded disjoint partition, sizes within 1 of the requested ratios
SplitResult split(const std::vector<Sample>& samples, double train_ratio, double val_ratio,
                  double test_ratio, std::uint64_t seed);

// JSON-lines of {id, features: {extents, data}, report, labels[]}
void save_dataset(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& path);

}  // namespace rgen
