#include "msfa/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

namespace msfa {

static_assert(std::endian::native == std::endian::little,
              "chain binary format assumes a little-endian host");

namespace {

constexpr char kChainMagic[8] = {'M', 'S', 'F', 'A', 'C', 'H', '0', '1'};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

double parse_double_or_throw(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw InputError(where + ": cannot parse number '" + token + "'");
  }
  return value;
}

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::int64_t read_i64(std::ifstream& in, const std::string& where) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw InputError(where + ": truncated header");
  return v;
}

void write_matrix_rowmajor(std::ofstream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

bool read_matrix_rowmajor(std::ifstream& in, Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      if (!in) return false;
      m(i, j) = v;
    }
  }
  return true;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& col_names) {
  if (static_cast<Eigen::Index>(col_names.size()) != m.cols()) {
    throw InputError("write_matrix_csv: need one name per column");
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  for (size_t j = 0; j < col_names.size(); ++j) {
    if (j) out << ',';
    out << col_names[j];
  }
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw InputError("write failed: " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path, std::vector<std::string>* col_names) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  std::vector<std::string> names;
  for (std::string& tok : split(line, ',')) names.push_back(unquote(tok));
  if (names.size() == 1 && names[0].empty()) names.clear();  // zero-column matrix
  const size_t p = names.size();

  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() && p > 0) {
      if (in.peek() == EOF) break;  // trailing newline
      throw InputError(path.string() + " row " + std::to_string(line_no) + ": empty line");
    }
    if (p == 0) {
      rows.emplace_back();
      continue;
    }
    const std::vector<std::string> toks = split(line, ',');
    if (toks.size() != p) {
      throw InputError(path.string() + " row " + std::to_string(line_no) + ": has " +
                       std::to_string(toks.size()) + " fields, expected " + std::to_string(p));
    }
    std::vector<double> row(p);
    for (size_t j = 0; j < p; ++j) {
      row[j] = parse_double_or_throw(
          toks[j], path.string() + " row " + std::to_string(line_no) + " column " +
                       std::to_string(j + 1));
    }
    rows.push_back(std::move(row));
  }

  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < p; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  if (col_names) *col_names = std::move(names);
  return m;
}

void write_study_csv(const std::filesystem::path& path, const StudyData& study) {
  write_matrix_csv(path, study.x, study.var_names);
}

StudyData read_study_csv(const std::filesystem::path& path) {
  StudyData s;
  s.x = read_matrix_csv(path, &s.var_names);
  if (s.var_names.empty()) throw InputError(path.string() + ": no variables");
  return s;
}

IngestResult ingest(const std::vector<std::string>& paths, const IngestOptions& options) {
  if (paths.empty()) throw InputError("ingest: no study files given");
  if (!(options.filter_variance > 0.0 && options.filter_variance <= 1.0)) {
    throw InputError("ingest: filter_variance must be in (0, 1]");
  }

  IngestResult res;
  for (size_t s = 0; s < paths.size(); ++s) {
    StudyData d = read_study_csv(paths[s]);
    d.id = static_cast<int>(s) + 1;
    res.studies.push_back(std::move(d));
  }

  // All studies must carry the same variable-name set; the first study's
  // order is canonical.
  const std::vector<std::string>& canon = res.studies.front().var_names;
  {
    std::set<std::string> canon_set(canon.begin(), canon.end());
    if (canon_set.size() != canon.size()) {
      throw InputError(paths.front() + ": duplicate variable names");
    }
    for (size_t s = 1; s < res.studies.size(); ++s) {
      StudyData& d = res.studies[s];
      std::set<std::string> names(d.var_names.begin(), d.var_names.end());
      if (names != canon_set) {
        std::ostringstream msg;
        msg << paths[s] << ": variable names differ from " << paths.front() << ";";
        for (const std::string& nm : canon_set) {
          if (!names.count(nm)) msg << " missing " << nm;
        }
        for (const std::string& nm : names) {
          if (!canon_set.count(nm)) msg << " extra " << nm;
        }
        throw InputError(msg.str());
      }
      if (d.var_names != canon) {
        std::map<std::string, int> where;
        for (size_t j = 0; j < d.var_names.size(); ++j) where[d.var_names[j]] = static_cast<int>(j);
        Matrix reordered(d.x.rows(), d.x.cols());
        for (size_t j = 0; j < canon.size(); ++j) {
          reordered.col(static_cast<Eigen::Index>(j)) = d.x.col(where[canon[j]]);
        }
        d.x = std::move(reordered);
        d.var_names = canon;
        res.warnings.push_back(paths[s] + ": columns reordered to match " + paths.front());
      }
    }
  }

  // Optional variance filter: keep the top fraction of variables by pooled
  // variance (original order preserved among the kept).
  if (options.filter_variance < 1.0) {
    const int p = res.studies.front().p();
    Vector pooled = Vector::Zero(p);
    long n_total = 0;
    for (const StudyData& d : res.studies) {
      const Eigen::RowVectorXd mean = d.x.colwise().mean();
      pooled += (d.x.rowwise() - mean).colwise().squaredNorm().transpose();
      n_total += d.n();
    }
    pooled /= std::max<long>(n_total - 1, 1);

    const int keep = std::max(1, static_cast<int>(std::ceil(options.filter_variance * p)));
    std::vector<int> order(p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return pooled(a) > pooled(b); });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    for (StudyData& d : res.studies) {
      Matrix filtered(d.x.rows(), keep);
      std::vector<std::string> names(keep);
      for (int j = 0; j < keep; ++j) {
        filtered.col(j) = d.x.col(order[static_cast<size_t>(j)]);
        names[j] = d.var_names[static_cast<size_t>(order[static_cast<size_t>(j)])];
      }
      d.x = std::move(filtered);
      d.var_names = std::move(names);
    }
    res.warnings.push_back("variance filter kept " + std::to_string(keep) + " of " +
                           std::to_string(p) + " variables");
  }

  // Center every column; constant columns become zero with a warning.
  for (StudyData& d : res.studies) {
    for (int j = 0; j < d.p(); ++j) {
      auto col = d.x.col(j);
      col.array() -= col.mean();
      if (col.squaredNorm() == 0.0) {
        res.warnings.push_back("study " + std::to_string(d.id) + " column " + d.var_names[j] +
                               " has zero variance");
      }
    }
  }

  validate_studies(res.studies);
  return res;
}

ChainWriter::ChainWriter(const std::filesystem::path& path, int p, int k_star,
                         std::vector<int> j_star, std::vector<int> n_s, long r_planned,
                         bool store_scores)
    : out_(path, std::ios::binary),
      path_(path),
      p_(p),
      k_star_(k_star),
      j_star_(std::move(j_star)),
      n_s_(std::move(n_s)),
      store_scores_(store_scores) {
  if (!out_) throw InputError("cannot open for writing: " + path.string());
  if (j_star_.size() != n_s_.size()) throw InputError("ChainWriter: j_star/n_s size mismatch");
  out_.write(kChainMagic, sizeof kChainMagic);
  write_i64(out_, p_);
  write_i64(out_, k_star_);
  write_i64(out_, static_cast<std::int64_t>(j_star_.size()));
  write_i64(out_, r_planned);
  write_i64(out_, store_scores_ ? 1 : 0);
  for (int j : j_star_) write_i64(out_, j);
  for (int n : n_s_) write_i64(out_, n);
  if (!out_) throw InputError("write failed: " + path.string());
}

void ChainWriter::append(const GibbsState& state) {
  write_matrix_rowmajor(out_, state.phi);
  for (size_t s = 0; s < j_star_.size(); ++s) write_matrix_rowmajor(out_, state.lambda[s]);
  for (size_t s = 0; s < j_star_.size(); ++s) write_matrix_rowmajor(out_, state.psi[s]);
  if (store_scores_) {
    for (size_t s = 0; s < j_star_.size(); ++s) {
      write_matrix_rowmajor(out_, state.scores[s].f);
      write_matrix_rowmajor(out_, state.scores[s].l);
    }
  }
  out_.flush();
  if (!out_) throw InputError("write failed: " + path_.string());
}

ChainDraws read_chain(const std::filesystem::path& path, std::string* warning) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kChainMagic, sizeof magic) != 0) {
    throw InputError(path.string() + ": not a chain file (bad magic)");
  }
  const std::string where = path.string();
  ChainDraws out;
  out.p = static_cast<int>(read_i64(in, where));
  out.k_star = static_cast<int>(read_i64(in, where));
  const long n_studies = static_cast<long>(read_i64(in, where));
  const long r_planned = static_cast<long>(read_i64(in, where));
  const bool store_scores = read_i64(in, where) != 0;
  if (out.p < 1 || out.k_star < 0 || n_studies < 1 || r_planned < 0) {
    throw InputError(where + ": corrupt header");
  }
  out.j_star.resize(n_studies);
  out.n_s.resize(n_studies);
  for (long s = 0; s < n_studies; ++s) out.j_star[s] = static_cast<int>(read_i64(in, where));
  for (long s = 0; s < n_studies; ++s) out.n_s[s] = static_cast<int>(read_i64(in, where));

  out.lambda.resize(n_studies);
  out.psi.resize(n_studies);
  if (store_scores) {
    out.f.resize(n_studies);
    out.l.resize(n_studies);
  }

  long r_read = 0;
  while (true) {
    Matrix phi(out.p, out.k_star);
    if (!read_matrix_rowmajor(in, phi)) break;
    std::vector<Matrix> lambdas, fs, ls;
    std::vector<Vector> psis;
    bool complete = true;
    for (long s = 0; s < n_studies && complete; ++s) {
      Matrix lam(out.p, out.j_star[s]);
      complete = read_matrix_rowmajor(in, lam);
      if (complete) lambdas.push_back(std::move(lam));
    }
    for (long s = 0; s < n_studies && complete; ++s) {
      Matrix psi(out.p, 1);
      complete = read_matrix_rowmajor(in, psi);
      if (complete) psis.push_back(psi.col(0));
    }
    if (store_scores) {
      for (long s = 0; s < n_studies && complete; ++s) {
        Matrix f(out.n_s[s], out.k_star), l(out.n_s[s], out.j_star[s]);
        complete = read_matrix_rowmajor(in, f) && read_matrix_rowmajor(in, l);
        if (complete) {
          fs.push_back(std::move(f));
          ls.push_back(std::move(l));
        }
      }
    }
    if (!complete) break;  // trailing partial draw: drop it
    out.phi.push_back(std::move(phi));
    for (long s = 0; s < n_studies; ++s) {
      out.lambda[s].push_back(std::move(lambdas[s]));
      out.psi[s].push_back(std::move(psis[s]));
      if (store_scores) {
        out.f[s].push_back(std::move(fs[s]));
        out.l[s].push_back(std::move(ls[s]));
      }
    }
    ++r_read;
  }
  if (warning && r_read < r_planned) {
    *warning = path.string() + ": holds " + std::to_string(r_read) + " of " +
               std::to_string(r_planned) + " planned draws";
  }
  return out;
}

PriorHyperparams RunConfig::prior(int n_studies) const {
  PriorHyperparams h;
  h.nu = nu;
  h.a1 = a1;
  h.a2 = a2;
  h.a_psi = a_psi;
  h.b_psi = b_psi;
  h.specific.assign(static_cast<size_t>(n_studies), SpecificPrior{nu_s, a1_s, a2_s});
  return h;
}

void RunConfig::validate() const {
  sampler.validate();
  if (!(threshold_eigen >= 0.0)) throw InputError("threshold_eigen must be >= 0");
  if (!(threshold_edge >= 0.0)) throw InputError("threshold_edge must be >= 0");
  if (op_iters < 1) throw InputError("op_iters must be >= 1");
  if (!(op_tol > 0.0)) throw InputError("op_tol must be positive");
  if (!(filter_variance > 0.0 && filter_variance <= 1.0)) {
    throw InputError("filter_variance must be in (0, 1]");
  }
}

namespace {

long parse_long_or_throw(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  long value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw InputError(where + ": cannot parse integer '" + token + "'");
  }
  return value;
}

bool parse_bool_or_throw(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw InputError(where + ": cannot parse boolean '" + token + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + " line " + std::to_string(line_no);
    if (eq == std::string::npos) throw InputError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "studies") {
      cfg.studies.clear();
      for (const std::string& tok : split(value, ',')) {
        const std::string p = trim(tok);
        if (!p.empty()) cfg.studies.push_back(p);
      }
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else if (key == "k_star") {
      cfg.sampler.k_star = static_cast<int>(parse_long_or_throw(value, where));
    } else if (key == "j_star") {
      cfg.sampler.j_star.clear();
      for (const std::string& tok : split(value, ',')) {
        cfg.sampler.j_star.push_back(static_cast<int>(parse_long_or_throw(tok, where)));
      }
    } else if (key == "n_iter") {
      cfg.sampler.n_iter = parse_long_or_throw(value, where);
    } else if (key == "burn_in") {
      cfg.sampler.burn_in = parse_long_or_throw(value, where);
    } else if (key == "thin") {
      cfg.sampler.thin = static_cast<int>(parse_long_or_throw(value, where));
    } else if (key == "seed") {
      cfg.sampler.seed = static_cast<std::uint64_t>(parse_long_or_throw(value, where));
    } else if (key == "n_chains") {
      cfg.sampler.n_chains = static_cast<int>(parse_long_or_throw(value, where));
    } else if (key == "store_scores") {
      cfg.sampler.store_scores = parse_bool_or_throw(value, where);
    } else if (key == "nu") {
      cfg.nu = parse_double_or_throw(value, where);
    } else if (key == "a1") {
      cfg.a1 = parse_double_or_throw(value, where);
    } else if (key == "a2") {
      cfg.a2 = parse_double_or_throw(value, where);
    } else if (key == "nu_s") {
      cfg.nu_s = parse_double_or_throw(value, where);
    } else if (key == "a1_s") {
      cfg.a1_s = parse_double_or_throw(value, where);
    } else if (key == "a2_s") {
      cfg.a2_s = parse_double_or_throw(value, where);
    } else if (key == "a_psi") {
      cfg.a_psi = parse_double_or_throw(value, where);
    } else if (key == "b_psi") {
      cfg.b_psi = parse_double_or_throw(value, where);
    } else if (key == "threshold_eigen") {
      cfg.threshold_eigen = parse_double_or_throw(value, where);
    } else if (key == "threshold_edge") {
      cfg.threshold_edge = parse_double_or_throw(value, where);
    } else if (key == "op_iters") {
      cfg.op_iters = static_cast<int>(parse_long_or_throw(value, where));
    } else if (key == "op_tol") {
      cfg.op_tol = parse_double_or_throw(value, where);
    } else if (key == "filter_variance") {
      cfg.filter_variance = parse_double_or_throw(value, where);
    } else {
      throw InputError(where + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# resolved configuration (all defaults filled in)\n";
  out << "studies = ";
  for (size_t i = 0; i < cfg.studies.size(); ++i) {
    if (i) out << ", ";
    out << cfg.studies[i];
  }
  out << '\n';
  out << "out_dir = " << cfg.out_dir << '\n';
  out << "k_star = " << cfg.sampler.k_star << '\n';
  out << "j_star = ";
  for (size_t i = 0; i < cfg.sampler.j_star.size(); ++i) {
    if (i) out << ", ";
    out << cfg.sampler.j_star[i];
  }
  out << '\n';
  out << "n_iter = " << cfg.sampler.n_iter << '\n';
  out << "burn_in = " << cfg.sampler.burn_in << '\n';
  out << "thin = " << cfg.sampler.thin << '\n';
  out << "seed = " << cfg.sampler.seed << '\n';
  out << "n_chains = " << cfg.sampler.n_chains << '\n';
  out << "store_scores = " << (cfg.sampler.store_scores ? "true" : "false") << '\n';
  out << "nu = " << format_double(cfg.nu) << '\n';
  out << "a1 = " << format_double(cfg.a1) << '\n';
  out << "a2 = " << format_double(cfg.a2) << '\n';
  out << "nu_s = " << format_double(cfg.nu_s) << '\n';
  out << "a1_s = " << format_double(cfg.a1_s) << '\n';
  out << "a2_s = " << format_double(cfg.a2_s) << '\n';
  out << "a_psi = " << format_double(cfg.a_psi) << '\n';
  out << "b_psi = " << format_double(cfg.b_psi) << '\n';
  out << "threshold_eigen = " << format_double(cfg.threshold_eigen) << '\n';
  out << "threshold_edge = " << format_double(cfg.threshold_edge) << '\n';
  out << "op_iters = " << cfg.op_iters << '\n';
  out << "op_tol = " << format_double(cfg.op_tol) << '\n';
  out << "filter_variance = " << format_double(cfg.filter_variance) << '\n';
  return out.str();
}

}  // namespace msfa
