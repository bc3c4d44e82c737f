#include "rationale/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "rationale/errors.hpp"
#include "rationale/losses.hpp"

namespace rationale::eval {

HardSelection harden_masks(const model::RationaleMasks& masks) {
  const int k = masks.aspects();
  HardSelection sel;
  sel.sets.resize(static_cast<std::size_t>(k));
  for (int t = 0; t < masks.length(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < masks.weights.rows(); ++r)
      if (masks.weights(r, t) > masks.weights(best, t)) best = r;
    if (best < k) sel.sets[static_cast<std::size_t>(best)].push_back(t);
  }
  return sel;
}

namespace {

std::size_t intersection_size(const TokenSet& a, const TokenSet& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

void check_shapes(std::span<const HardSelection> selections, std::span<const std::vector<TokenSet>> golds) {
  if (selections.size() != golds.size()) throw InvalidInput("selection and gold document counts differ");
  if (selections.empty()) throw InvalidInput("no documents to score");
  const std::size_t k = golds[0].size();
  for (std::size_t d = 0; d < golds.size(); ++d)
    if (golds[d].size() != k || selections[d].sets.size() != k)
      throw InvalidInput("document " + std::to_string(d) + ": rationale count does not match the aspect count");
}

std::string format_percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
  return buf;
}

}  // namespace

double token_f1(const TokenSet& selected, const TokenSet& gold) {
  if (selected.empty() && gold.empty()) return 1.0;
  if (selected.empty() || gold.empty()) return 0.0;
  const double hit = static_cast<double>(intersection_size(selected, gold));
  if (hit == 0.0) return 0.0;
  const double p = hit / double(selected.size());
  const double r = hit / double(gold.size());
  return 2.0 * p * r / (p + r);
}

double PermutationResult::average() const {
  if (per_aspect_f1.empty()) return 0.0;
  double s = 0.0;
  for (double f : per_aspect_f1) s += f;
  return s / double(per_aspect_f1.size());
}

PermutationResult best_permutation_f1(std::span<const HardSelection> selections,
                                      std::span<const std::vector<TokenSet>> golds) {
  check_shapes(selections, golds);
  const int k = static_cast<int>(golds[0].size());
  if (k > kMaxExhaustiveAspects)
    throw InvalidInput("best_permutation_f1: " + std::to_string(k) +
                       " aspects is too many for exhaustive search; use an assignment solver instead");
  const auto ku = static_cast<std::size_t>(k);
  const double n = double(selections.size());
  // f[r][g]: document-averaged F1 of rationale r against gold aspect g.
  std::vector<std::vector<double>> f(ku, std::vector<double>(ku, 0.0));
  for (std::size_t r = 0; r < ku; ++r)
    for (std::size_t g = 0; g < ku; ++g) {
      double s = 0.0;
      for (std::size_t d = 0; d < selections.size(); ++d) s += token_f1(selections[d].sets[r], golds[d][g]);
      f[r][g] = s / n;
    }

  std::vector<int> perm(ku);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationResult best;
  double best_score = -1.0;
  std::vector<double> per(ku);
  do {
    for (std::size_t r = 0; r < ku; ++r) per[static_cast<std::size_t>(perm[r])] = f[r][static_cast<std::size_t>(perm[r])];
    double s = 0.0;
    for (double v : per) s += v;
    const double score = s / double(k);
    if (score > best_score) {
      best_score = score;
      best.per_aspect_f1 = per;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<double> micro_f1(std::span<const HardSelection> selections,
                             std::span<const std::vector<TokenSet>> golds, std::span<const int> permutation) {
  check_shapes(selections, golds);
  const std::size_t k = golds[0].size();
  if (permutation.size() != k) throw InvalidInput("micro_f1: permutation size does not match the aspect count");
  std::vector<double> out(k, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const auto g = static_cast<std::size_t>(permutation[r]);
    std::size_t hit = 0, sel = 0, gold = 0;
    for (std::size_t d = 0; d < selections.size(); ++d) {
      hit += intersection_size(selections[d].sets[r], golds[d][g]);
      sel += selections[d].sets[r].size();
      gold += golds[d][g].size();
    }
    if (sel == 0 && gold == 0) out[g] = 1.0;
    else if (sel == 0 || gold == 0 || hit == 0) out[g] = 0.0;
    else out[g] = 2.0 * double(hit) / double(sel + gold);
  }
  return out;
}

double average_length(std::span<const HardSelection> selections) {
  if (selections.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : selections) {
    if (s.sets.empty()) continue;
    std::size_t n = 0;
    for (const auto& set : s.sets) n += set.size();
    total += double(n) / double(s.sets.size());
  }
  return total / double(selections.size());
}

std::optional<double> accuracy(std::span<const model::ModelOutput> outputs, std::span<const corpus::Document> docs) {
  if (outputs.size() != docs.size()) throw InvalidInput("accuracy: output and document counts differ");
  std::size_t labeled = 0, correct = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!docs[i].overall_label) continue;
    ++labeled;
    const int predicted = losses::sigmoid(outputs[i].overall_logit) >= 0.5 ? 1 : 0;
    if (predicted == *docs[i].overall_label) ++correct;
  }
  if (labeled == 0) return std::nullopt;
  return double(correct) / double(labeled);
}

std::vector<std::string> aspect_names(int aspects) {
  if (aspects == 5) return {"App.", "Aro.", "Pal.", "Tas.", "Ove."};
  std::vector<std::string> names;
  for (int k = 0; k < aspects; ++k) names.push_back("A" + std::to_string(k));
  return names;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["mode"] = mode;
  j["accuracy"] = accuracy ? nlohmann::json(*accuracy) : nlohmann::json(nullptr);
  j["f1_averaging"] = "macro_over_documents";
  j["per_aspect_f1"] = per_aspect_f1;
  j["avg_f1"] = avg_f1;
  j["micro_per_aspect_f1"] = micro_per_aspect_f1;
  j["micro_avg_f1"] = micro_avg_f1;
  j["avg_length_test"] = avg_length_test;
  j["avg_length_annotated"] = avg_length_annotated;
  j["permutation"] = permutation;
  j["aspect_names"] = aspect_names(static_cast<int>(per_aspect_f1.size()));
  j["test_documents"] = test_documents;
  j["annotated_documents"] = annotated_documents;
  return j;
}

std::string EvalReport::to_table() const {
  std::vector<std::string> head{"Method", "Mode", "Avg. Len.", "Acc.", "Avg F1"};
  char len[64];
  std::snprintf(len, sizeof len, "%.1f / %.1f", avg_length_test, avg_length_annotated);
  std::vector<std::string> macro{method, mode, len, accuracy ? format_percent(*accuracy) : "-",
                                 format_percent(avg_f1)};
  std::vector<std::string> micro{method, mode + " (micro)", len, accuracy ? format_percent(*accuracy) : "-",
                                 format_percent(micro_avg_f1)};
  for (const auto& name : aspect_names(static_cast<int>(per_aspect_f1.size()))) head.push_back(name);
  for (double f : per_aspect_f1) macro.push_back(format_percent(f));
  for (double f : micro_per_aspect_f1) micro.push_back(format_percent(f));

  std::vector<std::size_t> width(head.size());
  for (const auto* row : {&head, &macro, &micro})
    for (std::size_t c = 0; c < row->size() && c < width.size(); ++c) width[c] = std::max(width[c], (*row)[c].size());
  std::string out;
  for (const auto* row : {&head, &macro, &micro}) {
    for (std::size_t c = 0; c < row->size(); ++c) {
      const auto& cell = (*row)[c];
      if (c < 2) out += cell + std::string(width[c] - cell.size(), ' ');
      else out += std::string(width[c] - cell.size(), ' ') + cell;
      out += c + 1 < row->size() ? "  " : "\n";
    }
  }
  std::string p = "permutation:";
  for (int g : permutation) p += " " + std::to_string(g);
  return out + p + "\n";
}

EvalReport evaluate(const model::Model& model, bool label_trained, const std::string& method,
                    std::span<const corpus::Document> test, std::span<const corpus::Document> annotated,
                    kernels::Execution exec) {
  EvalReport rep;
  rep.method = method;
  rep.mode = std::string(model::to_string(model.mode()));
  rep.test_documents = test.size();
  rep.annotated_documents = annotated.size();

  auto selections_of = [&](const std::vector<model::ModelOutput>& outs) {
    std::vector<HardSelection> sel;
    sel.reserve(outs.size());
    for (const auto& o : outs) sel.push_back(harden_masks(o.masks));
    return sel;
  };

  if (!test.empty()) {
    const auto outs = kernels::forward_all(model, test, exec);
    if (label_trained) rep.accuracy = accuracy(outs, test);
    rep.avg_length_test = average_length(selections_of(outs));
  }
  if (!annotated.empty()) {
    std::vector<std::vector<TokenSet>> golds;
    for (std::size_t d = 0; d < annotated.size(); ++d) {
      if (annotated[d].annotations.size() != static_cast<std::size_t>(model.aspects()))
        throw InvalidInput("annotation document " + std::to_string(d) + " has " +
                           std::to_string(annotated[d].annotations.size()) + " aspects, the model has " +
                           std::to_string(model.aspects()));
      golds.push_back(annotated[d].annotations);
    }
    const auto outs = kernels::forward_all(model, annotated, exec);
    const auto sel = selections_of(outs);
    rep.avg_length_annotated = average_length(sel);
    const auto best = best_permutation_f1(sel, golds);
    rep.per_aspect_f1 = best.per_aspect_f1;
    rep.avg_f1 = best.average();
    rep.permutation = best.permutation;
    rep.micro_per_aspect_f1 = micro_f1(sel, golds, best.permutation);
    double s = 0.0;
    for (double f : rep.micro_per_aspect_f1) s += f;
    rep.micro_avg_f1 = s / double(rep.micro_per_aspect_f1.size());
  }
  return rep;
}

}  // namespace rationale::eval
