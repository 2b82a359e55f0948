#include "bbnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "bbnn/errors.hpp"
#include "bbnn/io.hpp"

namespace bbnn {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(cell);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

RawTable parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_line(line, schema.delimiter);
    break;
  }
  if (header.empty()) throw ConfigError("empty dataset");

  const auto label_it = std::find(header.begin(), header.end(), schema.label_column);
  if (label_it == header.end())
    throw ConfigError("label column '" + schema.label_column + "' not found in header");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  for (const auto& c : schema.categorical_columns)
    if (!contains(header, c)) throw ConfigError("categorical column '" + c + "' not in header");

  RawTable t;
  std::vector<std::size_t> source;  // header index for each RawColumn
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == label_col || contains(schema.drop_columns, header[c])) continue;
    RawColumn col;
    col.name = header[c];
    col.categorical = contains(schema.categorical_columns, header[c]);
    t.columns.push_back(std::move(col));
    source.push_back(c);
  }

  std::vector<std::string> raw_labels;
  std::vector<std::size_t> label_lines;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line, schema.delimiter);
    if (cells.size() != header.size())
      throw ConfigError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, found " +
                        std::to_string(cells.size()));
    raw_labels.push_back(cells[label_col]);
    label_lines.push_back(line_no);
    for (std::size_t k = 0; k < t.columns.size(); ++k) {
      RawColumn& col = t.columns[k];
      const std::string& cell = cells[source[k]];
      bool miss = contains(schema.missing_markers, cell);
      if (auto it = schema.column_missing_markers.find(col.name);
          it != schema.column_missing_markers.end() && contains(it->second, cell))
        miss = true;
      col.missing.push_back(miss);
      if (col.categorical) {
        col.text.push_back(miss ? std::string() : cell);
      } else if (miss) {
        col.numeric.push_back(NAN);
      } else {
        try {
          const double v = parse_double(cell);
          if (!std::isfinite(v)) throw std::invalid_argument(cell);
          col.numeric.push_back(v);
        } catch (const std::invalid_argument&) {
          throw ConfigError("line " + std::to_string(line_no) + ": column '" + col.name +
                            "' has unparseable value '" + cell + "'");
        }
      }
    }
  }
  if (raw_labels.empty()) throw ConfigError("empty dataset");

  t.class_names = schema.label_values;
  if (t.class_names.empty()) {
    std::set<std::string> seen(raw_labels.begin(), raw_labels.end());
    t.class_names.assign(seen.begin(), seen.end());
  }
  t.labels.reserve(raw_labels.size());
  for (std::size_t r = 0; r < raw_labels.size(); ++r) {
    const auto it = std::find(t.class_names.begin(), t.class_names.end(), raw_labels[r]);
    if (it == t.class_names.end())
      throw ConfigError("line " + std::to_string(label_lines[r]) + ": unknown label value '" +
                        raw_labels[r] + "'");
    t.labels.push_back(static_cast<int>(it - t.class_names.begin()));
  }
  return t;
}

RawTable load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path.string());
  return parse_csv(read_file(path), schema);
}

// ---------------------------------------------------------------------------

Matrix apply_manifest(const RawTable& raw, const nlohmann::json& manifest) {
  const auto& cols = manifest.at("columns");
  std::size_t width = 0;
  for (const auto& c : cols) width += c.at("kind") == "categorical" ? c.at("levels").size() : 1;
  Matrix x(raw.rows(), width);
  std::size_t out = 0;
  for (const auto& c : cols) {
    const std::string name = c.at("name");
    const auto it = std::find_if(raw.columns.begin(), raw.columns.end(),
                                 [&](const RawColumn& rc) { return rc.name == name; });
    if (it == raw.columns.end()) throw ConfigError("manifest column '" + name + "' missing from data");
    const RawColumn& rc = *it;
    const std::string kind = c.at("kind");
    if (kind == "categorical") {
      const auto levels = c.at("levels").get<std::vector<std::string>>();
      const std::string fill = c.at("fill");
      for (std::size_t r = 0; r < raw.rows(); ++r) {
        const std::string& v = rc.missing[r] ? fill : rc.text[r];
        for (std::size_t l = 0; l < levels.size(); ++l) x(r, out + l) = v == levels[l] ? 1.0 : 0.0;
      }
      out += levels.size();
      continue;
    }
    const double median = c.at("median");
    if (kind == "binary") {
      const double lo = c.at("low"), hi = c.at("high");
      const double mid = 0.5 * (lo + hi);
      for (std::size_t r = 0; r < raw.rows(); ++r) {
        const double v = rc.missing[r] ? median : rc.numeric[r];
        x(r, out) = v == lo ? 0.0 : v == hi ? 1.0 : (v > mid ? 1.0 : 0.0);
      }
    } else {
      const double mean = c.at("mean"), sd = c.at("std");
      for (std::size_t r = 0; r < raw.rows(); ++r) {
        const double v = rc.missing[r] ? median : rc.numeric[r];
        x(r, out) = sd > 0.0 ? (v - mean) / sd : 0.0;
      }
    }
    ++out;
  }
  return x;
}

Dataset preprocess(const RawTable& raw, std::span<const std::size_t> fit_indices,
                   const std::string& name) {
  if (fit_indices.empty()) throw std::invalid_argument("preprocess: no fit rows");
  for (std::size_t r : fit_indices)
    if (r >= raw.rows()) throw std::out_of_range("preprocess: fit index out of range");

  nlohmann::json cols = nlohmann::json::array();
  std::vector<std::string> feature_names;
  for (const RawColumn& rc : raw.columns) {
    nlohmann::json c;
    c["name"] = rc.name;
    std::size_t imputed = 0;
    for (std::size_t r = 0; r < raw.rows(); ++r) imputed += rc.missing[r] ? 1 : 0;
    c["missing_rows"] = imputed;

    if (rc.categorical) {
      std::map<std::string, std::size_t> counts;
      for (std::size_t r : fit_indices)
        if (!rc.missing[r]) ++counts[rc.text[r]];
      std::vector<std::string> levels;
      std::string fill;
      std::size_t best = 0;
      for (const auto& [lvl, n] : counts) {
        levels.push_back(lvl);
        if (n > best) {
          best = n;
          fill = lvl;
        }
      }
      if (levels.empty()) {
        c["note"] = "no observed levels in fit rows";
        fill = "";
      }
      c["kind"] = "categorical";
      c["levels"] = levels;
      c["fill"] = fill;
      c["imputation"] = "mode";
      for (const auto& l : levels) feature_names.push_back(rc.name + "=" + l);
      cols.push_back(std::move(c));
      continue;
    }

    std::vector<double> observed;
    for (std::size_t r : fit_indices)
      if (!rc.missing[r]) observed.push_back(rc.numeric[r]);
    double median = 0.0;
    if (observed.empty())
      c["note"] = "no observed values in fit rows; imputed with 0";
    else
      median = median_of(observed);
    c["median"] = median;
    c["imputation"] = "median";

    std::set<double> distinct(observed.begin(), observed.end());
    if (distinct.size() == 2) {
      c["kind"] = "binary";
      c["low"] = *distinct.begin();
      c["high"] = *distinct.rbegin();
    } else {
      double mean = 0.0;
      for (std::size_t r : fit_indices) mean += rc.missing[r] ? median : rc.numeric[r];
      mean /= static_cast<double>(fit_indices.size());
      double var = 0.0;
      for (std::size_t r : fit_indices) {
        const double d = (rc.missing[r] ? median : rc.numeric[r]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(fit_indices.size());
      const double sd = std::sqrt(var);
      c["kind"] = "numeric";
      c["mean"] = mean;
      c["std"] = sd > 0.0 ? sd : 0.0;
      if (!(sd > 0.0)) c["note"] = "zero variance in fit rows; normalised to 0";
    }
    feature_names.push_back(rc.name);
    cols.push_back(std::move(c));
  }

  Dataset d;
  d.name = name;
  d.labels = raw.labels;
  d.class_names = raw.class_names;
  d.class_count = raw.class_names.size();
  d.feature_names = feature_names;
  d.manifest = {{"version", 1},
                {"fit_rows", fit_indices.size()},
                {"class_names", raw.class_names},
                {"feature_names", feature_names},
                {"columns", cols}};
  d.features = apply_manifest(raw, d.manifest);
  return d;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> apportion(std::size_t total, std::span<const double> ratios) {
  std::vector<std::size_t> out(ratios.size());
  std::vector<double> frac(ratios.size());
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < ratios.size(); ++j) {
    const double exact = static_cast<double>(total) * ratios[j];
    out[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[j] = exact - static_cast<double>(out[j]);
    assigned += out[j];
  }
  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[order[i % order.size()]];
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> shuffled_classes(std::span<const int> labels,
                                                       std::size_t class_count,
                                                       std::size_t min_per_class,
                                                       std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count)
      throw std::invalid_argument("split: label out of range at row " + std::to_string(i));
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (by_class[c].size() < min_per_class)
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " samples; at least " + std::to_string(min_per_class) + " required");
    RngStream rng(seed, 0x5b117ull + c);
    shuffle(by_class[c], rng);
  }
  return by_class;
}

}  // namespace

Split stratified_split(std::span<const int> labels, std::size_t class_count,
                       std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const auto by_class = shuffled_classes(labels, class_count, 3, seed);
  Split s;
  s.seed = seed;
  s.ratios = ratios;
  std::vector<std::size_t>* parts[3] = {&s.train, &s.val, &s.test};

  // Part sizes come from apportioning N. Each class gives floor(n_c * r_j)
  // to part j plus at most one extra where n_c * r_j is fractional; the
  // extras are placed by largest remainder first, then repaired with
  // augmenting paths so both class totals and part sizes come out exact
  // (such a rounding always exists for a two-way table).
  const std::size_t kc = by_class.size();
  const auto global = apportion(labels.size(), ratios);
  std::vector<std::array<std::size_t, 3>> sizes(kc);
  std::vector<std::array<bool, 3>> eligible(kc), extra(kc);
  std::array<std::size_t, 3> demand = {global[0], global[1], global[2]};
  std::vector<std::size_t> left(kc);
  struct Slot {
    double frac;
    std::size_t c, j;
  };
  std::vector<Slot> slots;
  for (std::size_t c = 0; c < kc; ++c) {
    const double n = static_cast<double>(by_class[c].size());
    left[c] = by_class[c].size();
    for (std::size_t j = 0; j < 3; ++j) {
      const double exact = n * ratios[j];
      sizes[c][j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      left[c] -= sizes[c][j];
      demand[j] -= sizes[c][j];
      const double frac = exact - static_cast<double>(sizes[c][j]);
      eligible[c][j] = frac > 1e-9;
      extra[c][j] = false;
      if (eligible[c][j]) slots.push_back({frac, c, j});
    }
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.frac > b.frac + 1e-12; });
  for (const Slot& sl : slots)
    if (left[sl.c] > 0 && demand[sl.j] > 0) {
      extra[sl.c][sl.j] = true;
      --left[sl.c];
      --demand[sl.j];
    }
  for (std::size_t c0 = 0; c0 < kc; ++c0)
    while (left[c0] > 0) {
      // BFS over classes; part j is reached from class x through an unused
      // eligible slot and left through a class y that holds an extra in j.
      std::vector<long> from_part(3, -1), from_class(kc, -1);
      std::vector<char> seen(kc, 0);
      std::vector<std::size_t> queue{c0};
      seen[c0] = 1;
      long end = -1;
      for (std::size_t qi = 0; qi < queue.size() && end < 0; ++qi) {
        const std::size_t x = queue[qi];
        for (std::size_t j = 0; j < 3 && end < 0; ++j) {
          if (!eligible[x][j] || extra[x][j] || from_part[j] >= 0) continue;
          from_part[j] = static_cast<long>(x);
          if (demand[j] > 0) {
            end = static_cast<long>(j);
            break;
          }
          for (std::size_t y = 0; y < kc; ++y)
            if (!seen[y] && extra[y][j]) {
              seen[y] = 1;
              from_class[y] = static_cast<long>(j);
              queue.push_back(y);
            }
        }
      }
      if (end < 0) throw std::logic_error("split: no consistent stratified rounding");
      --demand[static_cast<std::size_t>(end)];
      --left[c0];
      for (long j = end;;) {
        const auto x = static_cast<std::size_t>(from_part[static_cast<std::size_t>(j)]);
        extra[x][static_cast<std::size_t>(j)] = true;
        if (x == c0) break;
        const long prev = from_class[x];
        extra[x][static_cast<std::size_t>(prev)] = false;
        j = prev;
      }
    }
  for (std::size_t c = 0; c < kc; ++c)
    for (std::size_t j = 0; j < 3; ++j) sizes[c][j] += extra[c][j] ? 1 : 0;

  for (std::size_t c = 0; c < kc; ++c) {
    const auto& members = by_class[c];
    std::size_t pos = 0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < sizes[c][j]; ++k) parts[j]->push_back(members[pos++]);
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return s;
}

Split stratified_split(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed) {
  return stratified_split(data.labels, data.class_count, ratios, seed);
}

std::vector<Split> stratified_kfold(std::span<const int> labels, std::size_t class_count,
                                    std::size_t k, std::uint64_t seed) {
  if (k < 3) throw ConfigError("k-fold needs k >= 3 (train, validation and test folds)");
  const auto by_class = shuffled_classes(labels, class_count, k, seed);
  std::vector<std::vector<std::size_t>> folds(k);
  // Deal each class round-robin, continuing where the previous class stopped
  // so fold sizes stay balanced.
  std::size_t next = 0;
  for (const auto& members : by_class)
    for (std::size_t idx : members) folds[next++ % k].push_back(idx);
  std::vector<Split> out;
  for (std::size_t i = 0; i < k; ++i) {
    Split s;
    s.seed = seed;
    s.ratios = {1.0 - 2.0 / static_cast<double>(k), 1.0 / static_cast<double>(k),
                1.0 / static_cast<double>(k)};
    for (std::size_t f = 0; f < k; ++f) {
      auto& dst = f == i ? s.test : f == (i + 1) % k ? s.val : s.train;
      dst.insert(dst.end(), folds[f].begin(), folds[f].end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<DatasetInfo>& dataset_registry() {
  static const std::vector<DatasetInfo> registry = [] {
    std::vector<DatasetInfo> r;
    {
      DatasetInfo d{"cancer", "cancer.csv", "Cancer", {}, 569};
      d.schema.label_column = "diagnosis";
      d.schema.label_values = {"B", "M"};
      r.push_back(d);
    }
    {
      DatasetInfo d{"hepatitis", "hepatitis.csv", "Hepatitis", {}, 155};
      d.schema.label_column = "class";
      d.schema.label_values = {"1", "2"};  // 1 = die, 2 = live
      r.push_back(d);
    }
    {
      DatasetInfo d{"diabetes", "diabetes.csv", "Diabetes", {}, 768};
      d.schema.label_column = "class";
      d.schema.label_values = {"0", "1"};
      for (const char* c : {"glucose", "blood_pressure", "skin_thickness", "insulin", "bmi"})
        d.schema.column_missing_markers[c] = {"0"};
      r.push_back(d);
    }
    {
      DatasetInfo d{"heart", "heart.csv", "Heart", {}, 270};
      d.schema.label_column = "class";
      d.schema.label_values = {"1", "2"};  // 1 = absent, 2 = present
      d.schema.categorical_columns = {"chest_pain", "resting_ecg", "slope", "thal"};
      r.push_back(d);
    }
    {
      DatasetInfo d{"cleveland_hungary", "cleveland_hungary.csv", "Cleveland-Hungary Heart", {}, 1190};
      d.schema.label_column = "target";
      d.schema.label_values = {"0", "1"};
      d.schema.categorical_columns = {"chest pain type", "resting ecg", "ST slope"};
      d.schema.column_missing_markers["cholesterol"] = {"0"};
      d.schema.column_missing_markers["resting bp s"] = {"0"};
      r.push_back(d);
    }
    return r;
  }();
  return registry;
}

const DatasetInfo& find_dataset(const std::string& name) {
  for (const auto& d : dataset_registry())
    if (d.name == name) return d;
  std::string names;
  for (const auto& d : dataset_registry()) names += (names.empty() ? "" : ", ") + d.name;
  throw ConfigError("unknown dataset '" + name + "' (known: " + names + ")");
}

RawTable load_registered(const DatasetInfo& info, const std::filesystem::path& path) {
  RawTable t = load_csv(path, info.schema);
  if (info.expected_rows != 0 && t.rows() != info.expected_rows)
    t.warnings.push_back(info.display_name + ": " + std::to_string(t.rows()) +
                         " rows loaded, reference count is " + std::to_string(info.expected_rows));
  return t;
}

}  // namespace bbnn
