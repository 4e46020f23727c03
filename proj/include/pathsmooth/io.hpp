#ifndef PATHSMOOTH_IO_HPP_
#define PATHSMOOTH_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathsmooth/common.hpp"
#include "pathsmooth/diagnostics.hpp"
#include "pathsmooth/exact.hpp"
#include "pathsmooth/hmm.hpp"
#include "pathsmooth/mhips.hpp"
#include "pathsmooth/smc.hpp"

namespace pathsmooth {

static_assert(std::endian::native == std::endian::little,
              "binary ensemble dumps assume a little-endian host");

// 17 significant digits: enough for double round-trips through text.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << content;
  if (!out) throw AlgorithmError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse number '" + s + "' in " + context);
  }
}

}  // namespace detail

// --- ObservationRecord: CSV `t,y[,x_true]`, JSON {seed, observations, true_states}.

inline std::string to_csv(const ObservationRecord& rec) {
  std::ostringstream out;
  const bool with_states = rec.true_states.has_value();
  out << (with_states ? "t,y,x_true\n" : "t,y\n");
  for (int t = 0; t < rec.horizon(); ++t) {
    out << t << ',' << format_double(rec.observations[t]);
    if (with_states) out << ',' << format_double((*rec.true_states)[t]);
    out << '\n';
  }
  return out.str();
}

inline ObservationRecord observation_record_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("observation CSV: empty file");
  const bool with_states = line == "t,y,x_true";
  if (!with_states && line != "t,y") {
    throw ConfigError("observation CSV: unexpected header '" + line + "'");
  }
  ObservationRecord rec;
  if (with_states) rec.true_states.emplace();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != (with_states ? 3u : 2u)) {
      throw ConfigError("observation CSV: malformed row '" + line + "'");
    }
    rec.observations.push_back(detail::parse_double(cells[1], "observation CSV"));
    if (with_states) {
      rec.true_states->push_back(detail::parse_double(cells[2], "observation CSV"));
    }
  }
  if (rec.observations.empty()) throw ConfigError("observation CSV: no rows");
  return rec;
}

inline nlohmann::json to_json(const ObservationRecord& rec) {
  nlohmann::json j;
  j["seed"] = rec.seed;
  j["observations"] = rec.observations;
  if (rec.true_states) {
    j["true_states"] = *rec.true_states;
  } else {
    j["true_states"] = nullptr;
  }
  return j;
}

inline ObservationRecord observation_record_from_json(const nlohmann::json& j) {
  ObservationRecord rec;
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.observations = j.at("observations").get<std::vector<double>>();
  if (j.contains("true_states") && !j.at("true_states").is_null()) {
    rec.true_states = j.at("true_states").get<std::vector<double>>();
  }
  return rec;
}

// --- ExactMarginals: CSV `t,mean,variance`.

inline std::string to_csv(const ExactMarginals& m) {
  std::ostringstream out;
  out << "t,mean,variance\n";
  for (int t = 0; t < m.horizon(); ++t) {
    out << t << ',' << format_double(m.means[t]) << ',' << format_double(m.variances[t])
        << '\n';
  }
  return out.str();
}

// --- PathEnsemble: CSV `i,t,state,log_weight` and the PSE1 binary dump.

inline std::string to_csv(const PathEnsemble& e) {
  if (e.state_dim != 1) throw ConfigError("ensemble CSV supports 1-D states only");
  std::ostringstream out;
  out << "i,t,state,log_weight\n";
  for (int i = 0; i < e.n_particles; ++i) {
    for (int t = 0; t < e.horizon; ++t) {
      out << i << ',' << t << ',' << format_double(e.state_ptr(i, t)[0]) << ','
          << format_double(e.log_weights[i]) << '\n';
    }
  }
  return out.str();
}

// Binary layout: magic "PSE1", then little-endian uint64 N and T+1, then
// row-major doubles: N*(T+1) path entries followed by N log-weights.
inline std::string to_pse_binary(const PathEnsemble& e) {
  if (e.state_dim != 1) throw ConfigError("PSE1 dump supports 1-D states only");
  std::string out;
  out.reserve(4 + 16 + (e.states.size() + e.log_weights.size()) * sizeof(double));
  out.append("PSE1", 4);
  const std::uint64_t n = static_cast<std::uint64_t>(e.n_particles);
  const std::uint64_t horizon = static_cast<std::uint64_t>(e.horizon);
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  out.append(reinterpret_cast<const char*>(&horizon), sizeof(horizon));
  out.append(reinterpret_cast<const char*>(e.states.data()),
             e.states.size() * sizeof(double));
  out.append(reinterpret_cast<const char*>(e.log_weights.data()),
             e.log_weights.size() * sizeof(double));
  return out;
}

inline PathEnsemble path_ensemble_from_pse_binary(const std::string& bytes) {
  if (bytes.size() < 20 || bytes.compare(0, 4, "PSE1") != 0) {
    throw ConfigError("PSE1 dump: bad magic");
  }
  std::uint64_t n = 0, horizon = 0;
  std::memcpy(&n, bytes.data() + 4, sizeof(n));
  std::memcpy(&horizon, bytes.data() + 12, sizeof(horizon));
  const std::size_t expected =
      20 + (n * horizon + n) * sizeof(double);
  if (bytes.size() != expected) {
    throw ConfigError("PSE1 dump: truncated or oversized payload");
  }
  PathEnsemble e = PathEnsemble::zeros(static_cast<int>(n), static_cast<int>(horizon), 1);
  std::memcpy(e.states.data(), bytes.data() + 20, n * horizon * sizeof(double));
  std::memcpy(e.log_weights.data(), bytes.data() + 20 + n * horizon * sizeof(double),
              n * sizeof(double));
  return e;
}

// --- Diagnostics reports.

inline std::string to_csv(const NeffReport& r) {
  std::ostringstream out;
  out << "t,neff\n";
  for (std::size_t t = 0; t < r.per_time_neff.size(); ++t) {
    out << t << ',' << format_double(r.per_time_neff[t]) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const CltReport& r) {
  nlohmann::json j;
  j["mean"] = r.functional_mean;
  j["var_single_run"] = r.variance_estimate_single_run;
  if (r.empirical_variance) {
    j["var_empirical"] = *r.empirical_variance;
  } else {
    j["var_empirical"] = nullptr;
  }
  j["n"] = r.n_particles;
  j["k"] = r.k_used;
  return j;
}

inline std::string to_csv(const std::vector<MsePassesRow>& rows) {
  std::ostringstream out;
  out << "k,weight_mode,mse,predicted_limit\n";
  for (const auto& row : rows) {
    out << row.k << ',' << to_string(row.weight_mode) << ',' << format_double(row.mse) << ','
        << format_double(row.predicted_limit) << '\n';
  }
  return out.str();
}

inline std::string to_csv(const MhipsTrace& trace) {
  std::ostringstream out;
  out << "t,proposals,accepts\n";
  for (std::size_t t = 0; t < trace.proposal_counts.size(); ++t) {
    out << t << ',' << trace.proposal_counts[t] << ',' << trace.acceptance_counts[t] << '\n';
  }
  return out.str();
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_IO_HPP_
