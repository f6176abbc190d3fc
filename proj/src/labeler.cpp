#include "rgen/labeler.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rgen/metrics.hpp"

namespace rgen {

namespace {

constexpr std::size_t kNegationWindow = 4;

const std::vector<std::vector<std::string>>& negation_cues() {
  static const std::vector<std::vector<std::string>> cues = {
      {"no"}, {"without"}, {"free", "of"}, {"negative", "for"}};
  return cues;
}

bool negated_before(const std::vector<std::string>& tokens, std::size_t phrase_start) {
  const std::size_t window_begin =
      phrase_start > kNegationWindow ? phrase_start - kNegationWindow : 0;
  for (const auto& cue : negation_cues()) {
    if (cue.size() > phrase_start) continue;
    for (std::size_t j = window_begin; j + cue.size() <= phrase_start; ++j) {
      if (std::equal(cue.begin(), cue.end(), tokens.begin() + static_cast<std::ptrdiff_t>(j))) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace

void FindingOntology::validate() const {
  std::set<std::string> ids, all_phrases;
  for (const Finding& f : findings) {
    if (f.id.empty()) throw std::invalid_argument("ontology: finding with empty id");
    if (!ids.insert(f.id).second) {
      throw std::invalid_argument("ontology: duplicate finding id '" + f.id + "'");
    }
    if (f.phrases.empty()) {
      throw std::invalid_argument("ontology: finding '" + f.id + "' has no phrases");
    }
    for (const std::string& phrase : f.phrases) {
      if (metric_tokenize(phrase).empty()) {
        throw std::invalid_argument("ontology: finding '" + f.id + "' has an empty phrase");
      }
      if (!all_phrases.insert(phrase).second) {
        throw std::invalid_argument("ontology: phrase '" + phrase +
                                    "' appears under more than one finding");
      }
    }
  }
}

const Finding* FindingOntology::find(const std::string& id) const {
  for (const Finding& f : findings) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

FindingOntology default_ontology() {
  FindingOntology ontology;
  ontology.findings = {
      {"cardiomegaly",
       "Cardiomegaly",
       {"cardiomegaly", "enlarged cardiac silhouette", "heart is enlarged"},
       true},
      {"edema", "Edema", {"pulmonary edema", "vascular congestion"}, true},
      {"consolidation", "Consolidation", {"focal consolidation", "airspace opacity"}, true},
      {"atelectasis", "Atelectasis", {"atelectasis", "volume loss"}, true},
      {"pleural_effusion",
       "Pleural Effusion",
       {"pleural effusion", "blunting of the costophrenic angle"},
       true},
  };
  ontology.validate();
  return ontology;
}

std::set<std::string> label_report(const std::string& text, const FindingOntology& ontology) {
  const std::vector<std::string> tokens = metric_tokenize(text);
  std::set<std::string> positive;
  for (const Finding& finding : ontology.findings) {
    for (const std::string& phrase : finding.phrases) {
      const std::vector<std::string> needle = metric_tokenize(phrase);
      if (needle.empty() || needle.size() > tokens.size()) continue;
      bool found = false;
      for (std::size_t i = 0; i + needle.size() <= tokens.size() && !found; ++i) {
        if (!std::equal(needle.begin(), needle.end(),
                        tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
          continue;
        }
        if (finding.negation_sensitive && negated_before(tokens, i)) continue;
        found = true;
      }
      if (found) {
        positive.insert(finding.id);
        break;
      }
    }
  }
  return positive;
}

ClassificationReport classification_report(const std::vector<std::set<std::string>>& predicted,
                                           const std::vector<std::set<std::string>>& truth,
                                           const FindingOntology& ontology) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("classification: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(truth.size()) + " truths");
  }
  ClassificationReport report;
  std::size_t correct = 0;
  for (const Finding& finding : ontology.findings) {
    FindingScore score;
    score.id = finding.id;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i].count(finding.id) > 0;
      const bool t = truth[i].count(finding.id) > 0;
      if (p && t) ++score.tp;
      else if (p && !t) ++score.fp;
      else if (!p && t) ++score.fn;
      else ++score.tn;
    }
    correct += score.tp + score.tn;
    const std::size_t n = truth.size();
    score.precision = score.tp + score.fp ? static_cast<double>(score.tp) /
                                                static_cast<double>(score.tp + score.fp)
                                          : 0.0;
    score.recall = score.tp + score.fn ? static_cast<double>(score.tp) /
                                             static_cast<double>(score.tp + score.fn)
                                       : 0.0;
    score.f1 = score.precision + score.recall > 0.0
                   ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                   : 0.0;
    score.prevalence = n ? static_cast<double>(score.tp + score.fn) / static_cast<double>(n) : 0.0;
    report.per_finding.push_back(score);
  }
  const std::size_t decisions = truth.size() * ontology.findings.size();
  report.accuracy = decisions ? static_cast<double>(correct) / static_cast<double>(decisions) : 0.0;
  return report;
}

std::vector<std::pair<std::string, double>> class_bias(
    const std::vector<std::set<std::string>>& truth, const FindingOntology& ontology) {
  std::vector<std::pair<std::string, double>> bias;
  for (const Finding& finding : ontology.findings) {
    std::size_t positives = 0;
    for (const auto& labels : truth) positives += labels.count(finding.id);
    bias.emplace_back(finding.id, truth.empty() ? 0.0
                                                : static_cast<double>(positives) /
                                                      static_cast<double>(truth.size()));
  }
  return bias;
}

void save_ontology(const std::string& path, const FindingOntology& ontology) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ontology: cannot open '" + path + "' for writing");
  for (const Finding& f : ontology.findings) {
    nlohmann::json record = {{"id", f.id}, {"name", f.name}, {"phrases", f.phrases}};
    if (!f.negation_sensitive) record["negation_sensitive"] = false;
    out << record.dump() << "\n";
  }
  if (!out) throw std::runtime_error("ontology: write to '" + path + "' failed");
}

FindingOntology load_ontology(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ontology: cannot open '" + path + "'");
  FindingOntology ontology;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json record = nlohmann::json::parse(line);
      Finding f;
      f.id = record.at("id").get<std::string>();
      f.name = record.at("name").get<std::string>();
      f.phrases = record.at("phrases").get<std::vector<std::string>>();
      f.negation_sensitive = record.value("negation_sensitive", true);
      ontology.findings.push_back(std::move(f));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("ontology '" + path + "' line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  ontology.validate();
  return ontology;
}

}  // namespace rgen
