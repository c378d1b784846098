#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "krutrim/rng.hpp"
#include "krutrim/training.hpp"
#include "training_detail.hpp"

namespace krutrim {

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kPT:
      return "pt";
    case Stage::kCPT:
      return "cpt";
    case Stage::kSFT:
      return "sft";
    case Stage::kDPO:
      return "dpo";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "pt") return Stage::kPT;
  if (s == "cpt") return Stage::kCPT;
  if (s == "sft") return Stage::kSFT;
  if (s == "dpo") return Stage::kDPO;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

void StageConfig::validate() const {
  auto fail = [&](const std::string& m) {
    throw std::invalid_argument("stage config (" + std::string(stage_name(stage)) + "): " + m);
  };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (resume_lr && !(*resume_lr > 0.0)) fail("resume_lr must be positive");
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (checkpoint_interval < 0) fail("checkpoint_interval must be >= 0");
  if (stage == Stage::kDPO) {
    if (!beta || !(*beta > 0.0)) fail("beta is required and must be positive");
  } else if (beta) {
    fail("beta is only meaningful for DPO");
  }
  if (stage == Stage::kCPT) {
    auto it = mixture.weights.find("original");
    if (it == mixture.weights.end()) fail("mixture must contain an 'original' key");
  }
  if ((stage == Stage::kPT || stage == Stage::kCPT) && !mixture.weights.empty()) {
    mixture.normalized();
  }
}

StageConfig StageConfig::defaults(Stage stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kPT:
    case Stage::kSFT:
      break;
    case Stage::kCPT:
      c.mixture.weights = {{"original", 0.25}, {"new", 0.75}};
      break;
    case Stage::kDPO:
      c.learning_rate = 5e-7;
      c.beta = 0.1;
      break;
  }
  return c;
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
  StageConfig c = defaults(parse_stage(j.at("stage").get<std::string>()));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("beta") && !j["beta"].is_null()) c.beta = j["beta"].get<double>();
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  if (j.contains("mixture")) c.mixture = MixtureSpec::from_json(j["mixture"]);
  c.seed = j.value("seed", c.seed);
  if (j.contains("resume_lr") && !j["resume_lr"].is_null()) c.resume_lr = j["resume_lr"].get<double>();
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.validate();
  return c;
}

nlohmann::json StageConfig::to_json() const {
  nlohmann::json j = {{"stage", stage_name(stage)},
                      {"learning_rate", learning_rate},
                      {"steps", steps},
                      {"batch_size", batch_size},
                      {"checkpoint_interval", checkpoint_interval},
                      {"seed", seed},
                      {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}}};
  if (beta) j["beta"] = *beta;
  if (resume_lr) j["resume_lr"] = *resume_lr;
  if (!mixture.weights.empty()) j["mixture"] = mixture.to_json();
  return j;
}

void SFTExample::validate() const {
  if (response.empty()) throw std::invalid_argument("SFT example: empty response");
  const auto& tags = sft_task_tags();
  if (std::find(tags.begin(), tags.end(), task_tag) == tags.end()) {
    throw std::invalid_argument("SFT example: unknown task_tag '" + task_tag + "'");
  }
}

SFTExample SFTExample::from_json(const nlohmann::json& j) {
  SFTExample e{j.at("prompt").get<std::string>(), j.at("response").get<std::string>(),
               j.value("task_tag", std::string("general-knowledge"))};
  e.validate();
  return e;
}

void PreferencePair::validate() const {
  if (chosen == rejected) throw std::invalid_argument("preference pair: chosen equals rejected");
  if (chosen.empty() || rejected.empty()) {
    throw std::invalid_argument("preference pair: empty response");
  }
}

PreferencePair PreferencePair::from_json(const nlohmann::json& j) {
  PreferencePair p{j.at("prompt").get<std::string>(), j.at("chosen").get<std::string>(),
                   j.at("rejected").get<std::string>()};
  p.validate();
  return p;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "step,stage,loss,lr,tokens_seen\n";
  char buf[64];
  for (const auto& r : records) {
    out << r.step << ',' << stage_name(r.stage) << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.learning_rate);
    out << buf << ',' << r.tokens_seen << '\n';
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

namespace {

std::span<const int> clamp_length(const std::vector<int>& seq, int max_seq_len) {
  const std::size_t n = std::min(seq.size(), static_cast<std::size_t>(max_seq_len) + 1);
  return {seq.data(), n};
}

struct KeyTable {
  std::vector<std::string> keys;
  std::vector<double> cumulative;
};

KeyTable mixture_keys(const StageConfig& cfg, const TrainData& data) {
  std::map<std::string, double> weights;
  if (cfg.mixture.weights.empty()) {
    // Without an explicit mixture every key is weighted by its sequence count.
    for (const auto& [key, seqs] : data.sequences) weights[key] = static_cast<double>(seqs.size());
  } else {
    weights = cfg.mixture.weights;
  }
  MixtureSpec spec{weights, cfg.mixture.seed};
  KeyTable table;
  double acc = 0.0;
  for (const auto& [key, w] : spec.normalized()) {
    if (w <= 0.0) continue;
    auto it = data.sequences.find(key);
    if (it == data.sequences.end() || it->second.empty()) {
      throw std::invalid_argument("stage/data mismatch: mixture key '" + key +
                                  "' has no sequences");
    }
    acc += w;
    table.keys.push_back(key);
    table.cumulative.push_back(acc);
  }
  table.cumulative.back() = 1.0;
  return table;
}

void check_data(const StageConfig& cfg, const TrainData& data) {
  auto mismatch = [&](const std::string& m) {
    throw std::invalid_argument("stage/data mismatch (" + std::string(stage_name(cfg.stage)) +
                                "): " + m);
  };
  switch (cfg.stage) {
    case Stage::kPT:
    case Stage::kCPT:
      if (data.sequences.empty()) mismatch("no pretraining sequences");
      for (const auto& [key, seqs] : data.sequences) {
        for (const auto& s : seqs) {
          if (s.size() < 2) mismatch("sequence in '" + key + "' is shorter than two tokens");
        }
      }
      break;
    case Stage::kSFT:
      if (data.sft.empty()) mismatch("no SFT examples");
      break;
    case Stage::kDPO:
      if (data.preferences.empty()) mismatch("no preference pairs");
      break;
  }
}

}  // namespace

TrainResult train_stage(Model<float>& model, const StageConfig& cfg, const TrainData& data,
                        const TrainOptions& options) {
  cfg.validate();
  check_data(cfg, data);

  TrainState fresh(model.config(), cfg.adam);
  TrainState& state = options.resume ? *options.resume : fresh;
  const double lr = cfg.effective_lr();
  const int max_len = model.config().max_seq_len;

  KeyTable keys;
  if (cfg.stage == Stage::kPT || cfg.stage == Stage::kCPT) keys = mixture_keys(cfg, data);

  // DPO reference log-probabilities are fixed for the whole stage.
  std::vector<double> ref_chosen, ref_rejected;
  if (cfg.stage == Stage::kDPO) {
    const Model<float> frozen = options.reference ? *options.reference : model;
    for (const auto& p : data.preferences) {
      ref_chosen.push_back(sequence_logprob(frozen, p.chosen));
      ref_rejected.push_back(sequence_logprob(frozen, p.rejected));
    }
  }

  TrainResult result;
  Weights<float> grads = Weights<float>::zeros(model.config());
  int end = cfg.steps;
  if (options.max_steps_this_call > 0) end = std::min(end, state.step + options.max_steps_this_call);

  for (int step = state.step; step < end; ++step) {
    Pcg32 rng(cfg.seed, static_cast<std::uint64_t>(step));
    grads.fill(0.0f);
    double loss = 0.0;

    switch (cfg.stage) {
      case Stage::kPT:
      case Stage::kCPT: {
        std::vector<std::span<const int>> batch;
        std::size_t count = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
          const double u = rng.uniform();
          std::size_t k = 0;
          while (u >= keys.cumulative[k]) ++k;
          const auto& seqs = data.sequences.at(keys.keys[k]);
          batch.push_back(clamp_length(seqs[rng.bounded(static_cast<std::uint32_t>(seqs.size()))], max_len));
          count += batch.back().size() - 1;
          ++result.key_draws[keys.keys[k]];
        }
        double sum = 0.0;
        for (auto seq : batch) {
          sum += detail::masked_ce_step<float>(model, seq, {}, 1.0 / count, &grads).first;
        }
        loss = sum / static_cast<double>(count);
        state.tokens_seen += count;
        break;
      }
      case Stage::kSFT: {
        std::vector<const TokenizedExample*> batch;
        std::size_t count = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
          batch.push_back(&data.sft[rng.bounded(static_cast<std::uint32_t>(data.sft.size()))]);
          const auto mask = batch.back()->response_mask();
          count += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
        }
        if (count == 0) throw std::invalid_argument("SFT batch has no response tokens");
        double sum = 0.0;
        for (const auto* ex : batch) {
          if (ex->tokens.size() > static_cast<std::size_t>(max_len) + 1) {
            throw std::invalid_argument("SFT example longer than max_seq_len");
          }
          const auto mask = ex->response_mask();
          sum += detail::masked_ce_step<float>(model, ex->tokens, mask, 1.0 / count, &grads).first;
          state.tokens_seen += ex->tokens.size() - 1;
        }
        loss = sum / static_cast<double>(count);
        break;
      }
      case Stage::kDPO: {
        double margin = 0.0;
        const double scale = 1.0 / cfg.batch_size;
        for (int b = 0; b < cfg.batch_size; ++b) {
          const auto i = rng.bounded(static_cast<std::uint32_t>(data.preferences.size()));
          const auto& pair = data.preferences[i];
          const auto [l, m] = detail::dpo_step<float>(model, pair, ref_chosen[i], ref_rejected[i],
                                                      *cfg.beta, scale, &grads);
          loss += l * scale;
          margin += m * scale;
          state.tokens_seen += pair.chosen.tokens.size() + pair.rejected.tokens.size() - 2;
        }
        result.dpo_margins.push_back(margin);
        break;
      }
    }

    backward_and_step(model, grads, state.optimizer, lr);
    state.step = step + 1;
    result.log.records.push_back({state.step, cfg.stage, loss, lr, state.tokens_seen});

    if (!options.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
        state.step % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%s_%07d.krtm", std::string(stage_name(cfg.stage)).c_str(),
                    state.step);
      const auto path = options.checkpoint_dir / name;
      std::filesystem::create_directories(options.checkpoint_dir);
      save_train_state(path, model, state, cfg.stage);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

void save_train_state(const std::filesystem::path& path, const Model<float>& model,
                      const TrainState& state, Stage stage) {
  auto tensors = to_named_tensors(model.config(), model.weights());
  for (auto& t : to_named_tensors(model.config(), state.optimizer.first_moment(), "adam.m.")) {
    tensors.push_back(std::move(t));
  }
  for (auto& t : to_named_tensors(model.config(), state.optimizer.second_moment(), "adam.v.")) {
    tensors.push_back(std::move(t));
  }
  const nlohmann::json meta = {{"format", "krtm"},
                               {"config", model.config().to_json()},
                               {"extra",
                                {{"stage", stage_name(stage)},
                                 {"step", state.step},
                                 {"tokens_seen", state.tokens_seen},
                                 {"adam_steps", state.optimizer.steps_taken()}}}};
  write_tensor_file(path.string(), meta, tensors);
}

std::pair<Model<float>, TrainState> load_train_state(const std::filesystem::path& path) {
  auto [meta, tensors] = read_tensor_file(path.string());
  const ModelConfig config = ModelConfig::from_json(meta.at("config"));
  const auto& extra = meta.at("extra");
  Model<float> model(config, from_named_tensors(config, tensors));
  TrainState state(config);
  state.optimizer.restore(from_named_tensors(config, tensors, "adam.m."),
                          from_named_tensors(config, tensors, "adam.v."),
                          extra.at("adam_steps").get<long>());
  state.step = extra.at("step").get<int>();
  state.tokens_seen = extra.at("tokens_seen").get<std::size_t>();
  return {std::move(model), std::move(state)};
}

double mean_lm_loss(const Model<float>& model, const std::vector<std::vector<int>>& sequences) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    const auto seq = clamp_length(s, model.config().max_seq_len);
    if (seq.size() < 2) continue;
    const auto [l, n] = detail::masked_ce_step<float>(model, seq, {}, 1.0, nullptr);
    sum += l;
    count += n;
  }
  if (count == 0) throw std::invalid_argument("mean_lm_loss: no scorable positions");
  return sum / static_cast<double>(count);
}

double mean_implicit_margin(const Model<float>& policy, const Model<float>& reference,
                            const std::vector<TokenizedPair>& pairs, double beta) {
  if (pairs.empty()) throw std::invalid_argument("mean_implicit_margin: no pairs");
  double sum = 0.0;
  for (const auto& p : pairs) {
    sum += implicit_reward_margin(sequence_logprob(policy, p.chosen),
                                  sequence_logprob(policy, p.rejected),
                                  sequence_logprob(reference, p.chosen),
                                  sequence_logprob(reference, p.rejected), beta);
  }
  return sum / static_cast<double>(pairs.size());
}

}  // namespace krutrim
