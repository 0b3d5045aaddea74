#include "fedmrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedmrl/errors.hpp"

namespace fedmrl {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedMrl: return "fedmrl";
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedProx: return "fedprox";
    case Algorithm::kFedNova: return "fednova";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::kFedMrl, Algorithm::kFedAvg, Algorithm::kFedProx, Algorithm::kFedNova}) {
    if (name == to_string(a)) return a;
  }
  throw ConfigError("algo: unknown algorithm '" + std::string(name) + "'");
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return to_config_text(a) == to_config_text(b);
}

namespace {

[[noreturn]] void fail(std::string_view key, const std::string& what) {
  throw ConfigError(std::string(key) + ": " + what);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(key, "expected a number, got '" + std::string(v) + "'");
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    fail(key, "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  v = trim(v);
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool quoted = false;
};

template <typename Member>
Field real(Member member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { member(c) = to_double(k, v); },
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Member>
Field count(Member member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { member(c) = to_size(k, v); },
          [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

const std::vector<std::pair<std::string, Field>>& registry() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> f;
    f.emplace_back("algo", Field{[](ExperimentConfig& c, std::string_view, std::string_view v) { c.algo = parse_algorithm(v); },
                                 [](const ExperimentConfig& c) { return std::string(to_string(c.algo)); }, true});
    f.emplace_back("seed", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                   std::uint64_t s = 0;
                                   auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
                                   if (ec != std::errc() || p != v.data() + v.size()) fail(k, "expected an unsigned integer");
                                   c.seed = s;
                                 },
                                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
    f.emplace_back("clients", count([](ExperimentConfig& c) -> auto& { return c.clients; }));
    f.emplace_back("rounds", count([](ExperimentConfig& c) -> auto& { return c.rounds; }));
    f.emplace_back("eval_fraction", real([](ExperimentConfig& c) -> auto& { return c.eval_fraction; }));
    f.emplace_back("model.hidden", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                           c.hidden.clear();
                                           for (auto item : split_list(v)) c.hidden.push_back(to_size(k, item));
                                         },
                                         [](const ExperimentConfig& c) { return join(c.hidden); }, true});
    f.emplace_back("model.activation",
                   Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                           if (v == "relu") c.activation = Activation::kRelu;
                           else if (v == "tanh") c.activation = Activation::kTanh;
                           else fail(k, "expected 'relu' or 'tanh'");
                         },
                         [](const ExperimentConfig& c) {
                           return std::string(c.activation == Activation::kRelu ? "relu" : "tanh");
                         },
                         true});
    f.emplace_back("data.source", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                          if (v != "synthetic" && v != "csv") fail(k, "expected 'synthetic' or 'csv'");
                                          c.data.source = std::string(v);
                                        },
                                        [](const ExperimentConfig& c) { return c.data.source; }, true});
    f.emplace_back("data.path", Field{[](ExperimentConfig& c, std::string_view, std::string_view v) { c.data.path = std::string(v); },
                                      [](const ExperimentConfig& c) { return c.data.path; }, true});
    f.emplace_back("data.classes", count([](ExperimentConfig& c) -> auto& { return c.data.classes; }));
    f.emplace_back("data.per_class", count([](ExperimentConfig& c) -> auto& { return c.data.per_class; }));
    f.emplace_back("data.dim", count([](ExperimentConfig& c) -> auto& { return c.data.dim; }));
    f.emplace_back("data.separation", real([](ExperimentConfig& c) -> auto& { return c.data.separation; }));
    f.emplace_back("partition.eta", real([](ExperimentConfig& c) -> auto& { return c.eta; }));
    f.emplace_back("partition.shards_per_class", count([](ExperimentConfig& c) -> auto& { return c.shards_per_class; }));
    f.emplace_back("train.lr", real([](ExperimentConfig& c) -> auto& { return c.lr; }));
    f.emplace_back("train.batch_size", count([](ExperimentConfig& c) -> auto& { return c.batch_size; }));
    f.emplace_back("train.local_epochs", count([](ExperimentConfig& c) -> auto& { return c.local_epochs; }));
    f.emplace_back("fair.lambda", real([](ExperimentConfig& c) -> auto& { return c.lambda_fair; }));
    f.emplace_back("fair.clamp_lo", real([](ExperimentConfig& c) -> auto& { return c.clamp_lo; }));
    f.emplace_back("fair.clamp_hi", real([](ExperimentConfig& c) -> auto& { return c.clamp_hi; }));
    f.emplace_back("fedprox.mu", real([](ExperimentConfig& c) -> auto& { return c.fedprox_mu; }));
    f.emplace_back("rl.gamma", real([](ExperimentConfig& c) -> auto& { return c.rl.gamma; }));
    f.emplace_back("rl.zeta", real([](ExperimentConfig& c) -> auto& { return c.rl.zeta; }));
    f.emplace_back("rl.epsilon_start", real([](ExperimentConfig& c) -> auto& { return c.rl.epsilon_start; }));
    f.emplace_back("rl.epsilon_end", real([](ExperimentConfig& c) -> auto& { return c.rl.epsilon_end; }));
    f.emplace_back("rl.epsilon_decay_fraction", real([](ExperimentConfig& c) -> auto& { return c.epsilon_decay_fraction; }));
    f.emplace_back("rl.replay_capacity", count([](ExperimentConfig& c) -> auto& { return c.rl.replay_capacity; }));
    f.emplace_back("rl.batch", count([](ExperimentConfig& c) -> auto& { return c.rl.batch_size; }));
    f.emplace_back("rl.target_sync", count([](ExperimentConfig& c) -> auto& { return c.rl.target_sync_period; }));
    f.emplace_back("rl.lr", real([](ExperimentConfig& c) -> auto& { return c.rl.learning_rate; }));
    f.emplace_back("rl.grad_clip", real([](ExperimentConfig& c) -> auto& { return c.rl.grad_clip; }));
    f.emplace_back("rl.hidden", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                        c.rl.agent_hidden.clear();
                                        for (auto item : split_list(v)) c.rl.agent_hidden.push_back(to_size(k, item));
                                      },
                                      [](const ExperimentConfig& c) { return join(c.rl.agent_hidden); }, true});
    f.emplace_back("rl.embed", count([](ExperimentConfig& c) -> auto& { return c.rl.mixer_embed; }));
    f.emplace_back("rl.levels", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                        c.grid.levels.clear();
                                        for (auto item : split_list(v)) c.grid.levels.push_back(to_double(k, item));
                                      },
                                      [](const ExperimentConfig& c) { return join(c.grid.levels); }, true});
    f.emplace_back("som.rows", count([](ExperimentConfig& c) -> auto& { return c.som.rows; }));
    f.emplace_back("som.cols", count([](ExperimentConfig& c) -> auto& { return c.som.cols; }));
    f.emplace_back("som.dim", count([](ExperimentConfig& c) -> auto& { return c.som.dim; }));
    f.emplace_back("som.sigma0", real([](ExperimentConfig& c) -> auto& { return c.som.sigma0; }));
    f.emplace_back("som.lr0", real([](ExperimentConfig& c) -> auto& { return c.som.lr0; }));
    f.emplace_back("som.decay_rounds", real([](ExperimentConfig& c) -> auto& { return c.som.decay_rounds; }));
    return f;
  }();
  return fields;
}

const Field* find_field(std::string_view key) {
  for (const auto& [name, field] : registry()) {
    if (name == key) return &field;
  }
  return nullptr;
}

void apply(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  const Field* field = find_field(key);
  if (!field) throw ConfigError(std::string(key) + ": unknown key");
  value = trim(value);
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
  field->set(cfg, key, value);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, field] : registry()) k.push_back(name);
    return k;
  }();
  return keys;
}

void ExperimentConfig::validate() const {
  if (clients < 2) fail("clients", "must be >= 2");
  if (rounds < 1) fail("rounds", "must be >= 1");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) fail("eval_fraction", "must lie in (0, 1)");
  for (std::size_t h : hidden) {
    if (h == 0) fail("model.hidden", "layer widths must be positive");
  }
  if (data.source == "csv" && data.path.empty()) fail("data.path", "required when data.source = csv");
  if (data.classes < 2) fail("data.classes", "must be >= 2");
  if (data.source == "synthetic") {
    if (data.per_class == 0) fail("data.per_class", "must be positive");
    if (data.dim == 0) fail("data.dim", "must be positive");
    if (data.dim < 2 && data.dim < data.classes) fail("data.dim", "must be >= 2 when smaller than the class count");
    if (!(data.separation >= 0.0)) fail("data.separation", "must be >= 0");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) fail("partition.eta", "must lie in [0, 1]");
  if (shards_per_class == 0) fail("partition.shards_per_class", "must be positive");
  if (!(lr > 0.0)) fail("train.lr", "must be > 0");
  if (batch_size == 0) fail("train.batch_size", "must be positive");
  if (local_epochs == 0) fail("train.local_epochs", "must be >= 1");
  if (!(lambda_fair >= 0.0)) fail("fair.lambda", "must be >= 0");
  if (!(clamp_lo > 0.0)) fail("fair.clamp_lo", "must be > 0");
  if (!(clamp_hi >= clamp_lo)) fail("fair.clamp_hi", "must be >= fair.clamp_lo");
  if (!(fedprox_mu >= 0.0)) fail("fedprox.mu", "must be >= 0");
  if (!(rl.gamma > 0.0 && rl.gamma <= 1.0)) fail("rl.gamma", "must lie in (0, 1]");
  if (!(rl.zeta >= 0.0 && rl.zeta <= 1.0)) fail("rl.zeta", "must lie in [0, 1]");
  if (!(rl.epsilon_start >= 0.0 && rl.epsilon_start <= 1.0)) fail("rl.epsilon_start", "must lie in [0, 1]");
  if (!(rl.epsilon_end >= 0.0 && rl.epsilon_end <= rl.epsilon_start)) {
    fail("rl.epsilon_end", "must lie in [0, rl.epsilon_start]");
  }
  if (!(epsilon_decay_fraction >= 0.0 && epsilon_decay_fraction <= 1.0)) {
    fail("rl.epsilon_decay_fraction", "must lie in [0, 1]");
  }
  if (rl.replay_capacity == 0) fail("rl.replay_capacity", "must be positive");
  if (rl.batch_size == 0) fail("rl.batch", "must be positive");
  if (rl.target_sync_period == 0) fail("rl.target_sync", "must be positive");
  if (!(rl.learning_rate > 0.0)) fail("rl.lr", "must be > 0");
  if (!(rl.grad_clip > 0.0)) fail("rl.grad_clip", "must be > 0");
  if (rl.mixer_embed == 0) fail("rl.embed", "must be positive");
  try {
    grid.validate();
  } catch (const ConfigError& e) {
    fail("rl.levels", e.what());
  }
  if (som.rows == 0) fail("som.rows", "must be positive");
  if (som.cols == 0) fail("som.cols", "must be positive");
  if (som.dim == 0) fail("som.dim", "must be positive");
  if (!(som.sigma0 > 0.0)) fail("som.sigma0", "must be > 0");
  if (!(som.lr0 >= 0.0)) fail("som.lr0", "must be >= 0");
  if (!(som.decay_rounds >= 0.0)) fail("som.decay_rounds", "must be >= 0");
}

std::vector<std::size_t> ExperimentConfig::layer_sizes() const {
  std::vector<std::size_t> sizes{data.dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(data.classes);
  return sizes;
}

RlConfig ExperimentConfig::effective_rl() const {
  RlConfig out = rl;
  out.epsilon_decay_rounds =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(epsilon_decay_fraction * static_cast<double>(rounds))));
  return out;
}

ExperimentConfig parse_config_text(std::string_view text, const ConfigOverrides& overrides) {
  ExperimentConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(line.substr(0, eq)));
    if (!section.empty()) key = section + "." + key;
    apply(cfg, key, line.substr(eq + 1));
  }
  for (const auto& [key, value] : overrides) apply(cfg, key, value);
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), overrides);
}

std::string to_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : registry()) {
    const std::string v = field.get(cfg);
    out += name + " = " + (field.quoted ? "\"" + v + "\"" : v) + "\n";
  }
  return out;
}

}  // namespace fedmrl
