#pragma once

#include <set>
#include <string>
#include <vector>

namespace rgen {

struct Finding {
  std::string id;
  std::string name;
  std::vector<std::string> phrases;  // mention phrases, non-empty
  bool negation_sensitive = true;
};

struct FindingOntology {
  std::vector<Finding> findings;

  void validate() const;  // phrase lists non-empty, disjoint across findings
  const Finding* find(const std::string& id) const;
};

// Five synthetic findings mirroring common chest pathologies, with
// consolidation as the deliberately rare class.
FindingOntology default_ontology();

// A finding is positive iff one of its phrases occurs and that occurrence is
// not preceded within 4 tokens by a negation cue.
std::set<std::string> label_report(const std::string& text, const FindingOntology& ontology);

struct FindingScore {
  std::string id;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double prevalence = 0.0;
};

struct ClassificationReport {
  std::vector<FindingScore> per_finding;
  double accuracy = 0.0;  // micro accuracy over (sample, finding) decisions
};

ClassificationReport classification_report(const std::vector<std::set<std::string>>& predicted,
                                           const std::vector<std::set<std::string>>& truth,
                                           const FindingOntology& ontology);

// per-finding positive prevalence in the truth labels
std::vector<std::pair<std::string, double>> class_bias(
    const std::vector<std::set<std::string>>& truth, const FindingOntology& ontology);

// JSON-lines of {id, name, phrases[]}
void save_ontology(const std::string& path, const FindingOntology& ontology);
FindingOntology load_ontology(const std::string& path);

}  // namespace rgen
