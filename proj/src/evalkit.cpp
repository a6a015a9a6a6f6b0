#include "vlltr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vlltr/error.hpp"

namespace vlltr {
namespace {

using json = nlohmann::ordered_json;

json band_json(const std::optional<BandScore>& b) {
  if (!b) return nullptr;
  return {{"accuracy", b->accuracy()}, {"correct", b->correct}, {"total", b->total}};
}

std::optional<BandScore> band_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return BandScore{j.at("correct").get<std::size_t>(), j.at("total").get<std::size_t>()};
}

std::string pct(const std::optional<BandScore>& b) {
  if (!b) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * b->accuracy());
  return buf;
}

}  // namespace

std::optional<BandScore> EvalReport::band(Band b) const {
  switch (b) {
    case Band::Many: return many;
    case Band::Medium: return medium;
    case Band::Few: return few;
  }
  return std::nullopt;
}

double EvalReport::class_macro() const {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& c : per_class)
    if (c.total > 0) {
      acc += c.accuracy();
      ++n;
    }
  if (n == 0) throw ValidationError("class_macro: no class has test samples");
  return acc / static_cast<double>(n);
}

std::string EvalReport::to_json() const {
  json j;
  j["fingerprint"] = fingerprint;
  j["overall"] = band_json(overall);
  j["many"] = band_json(many);
  j["medium"] = band_json(medium);
  j["few"] = band_json(few);
  json pc = json::array();
  for (const auto& c : per_class) pc.push_back({{"correct", c.correct}, {"total", c.total}});
  j["per_class"] = std::move(pc);
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.overall = *band_from(j.at("overall"));
    r.many = band_from(j.at("many"));
    r.medium = band_from(j.at("medium"));
    r.few = band_from(j.at("few"));
    for (const auto& c : j.at("per_class"))
      r.per_class.push_back({c.at("correct").get<std::size_t>(), c.at("total").get<std::size_t>()});
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

EvalReport evaluate(const std::vector<std::size_t>& predictions,
                    const std::vector<std::size_t>& labels, const ShotBands& bands,
                    std::string fingerprint) {
  if (predictions.size() != labels.size())
    throw ValidationError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ValidationError("evaluate: no samples");
  EvalReport r;
  r.fingerprint = std::move(fingerprint);
  r.per_class.resize(bands.band.size());
  BandScore per_band[3];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t y = labels[i];
    if (y >= bands.band.size())
      throw ValidationError("evaluate: class " + std::to_string(y) + " has no shot band");
    const bool ok = predictions[i] == y;
    auto& b = per_band[static_cast<int>(bands.band[y])];
    for (BandScore* s : {&r.overall, &b, &r.per_class[y]}) {
      s->correct += ok;
      s->total += 1;
    }
  }
  auto opt = [](const BandScore& s) {
    return s.total ? std::optional<BandScore>(s) : std::nullopt;
  };
  r.many = opt(per_band[static_cast<int>(Band::Many)]);
  r.medium = opt(per_band[static_cast<int>(Band::Medium)]);
  r.few = opt(per_band[static_cast<int>(Band::Few)]);
  return r;
}

std::vector<std::size_t> rank_by_cosine(std::span<const double> query, const Tensor& images,
                                        std::size_t k) {
  if (images.rank() != 2 || images.dim(1) != query.size())
    throw ShapeError("rank_by_cosine: images " + shape_str(images.shape()) +
                     " do not match query width " + std::to_string(query.size()));
  const std::size_t n = images.dim(0);
  if (k > n)
    throw ValidationError("retrieval: k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(n) + " available images");
  Var q = Var::constant(Tensor({1, query.size()}, std::vector<double>(query.begin(), query.end())));
  const Tensor cos = cosine_sim_matrix(q, Var::constant(images)).value();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cos[a] > cos[b]; });
  order.resize(k);
  return order;
}

std::vector<std::size_t> concept_retrieval(const TokenSeq& query, const Tensor& images,
                                           const EncoderPair& enc, std::size_t k) {
  const EncoderPair frozen = enc.clone(false);
  const Tensor t = encode_texts(frozen.linguistic, {query}).value();
  return rank_by_cosine(t.row(0), encode_images(frozen.visual, images).value(), k);
}

std::string ablation_report(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (rows.empty()) throw ValidationError("ablation_report: no entries");
  const std::vector<std::string> head = {"config", "overall", "many", "medium", "few"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& [label, r] : rows)
    cells.push_back({label, pct(r.overall), pct(r.many), pct(r.medium), pct(r.few)});
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        os << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    os << '\n';
  };
  emit(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) emit(row);
  return os.str();
}

}  // namespace vlltr
