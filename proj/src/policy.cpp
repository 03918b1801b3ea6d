#include "bapo/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bapo/softmax.hpp"

namespace bapo {

namespace {

constexpr const char* kPolicySchema = "bapo.policy/1";

void check_same_shape(const PolicyParams& p, const PolicyParams& q) {
  if (p.vocab_size() != q.vocab_size() || p.max_len() != q.max_len() ||
      p.num_prompts() != q.num_prompts()) {
    throw std::invalid_argument("policy shapes differ");
  }
}

}  // namespace

std::uint64_t response_space_size(int vocab_size, int max_len) {
  std::uint64_t n = 1;
  for (int t = 0; t < max_len; ++t) {
    n *= static_cast<std::uint64_t>(vocab_size);
    if (n > kMaxEnumerable) {
      throw CapacityError("response space V^L exceeds " + std::to_string(kMaxEnumerable));
    }
  }
  return n;
}

std::uint64_t sequence_index(const ResponseSeq& y, int vocab_size) {
  std::uint64_t idx = 0;
  for (int tok : y.tokens) idx = idx * static_cast<std::uint64_t>(vocab_size) + tok;
  return idx;
}

ResponseSeq sequence_from_index(std::uint64_t index, int vocab_size, int max_len) {
  ResponseSeq y;
  y.tokens.assign(max_len, 0);
  for (int t = max_len - 1; t >= 0; --t) {
    y.tokens[t] = static_cast<int>(index % vocab_size);
    index /= vocab_size;
  }
  return y;
}

PolicyParams::PolicyParams(int num_prompts, int vocab_size, int max_len, std::uint64_t step_tag)
    : PolicyParams(LogitMatrix::Zero(static_cast<Eigen::Index>(num_prompts) * max_len, vocab_size),
                   num_prompts, vocab_size, max_len, step_tag) {}

PolicyParams::PolicyParams(LogitMatrix logits, int num_prompts, int vocab_size, int max_len,
                           std::uint64_t step_tag)
    : logits_(std::move(logits)),
      num_prompts_(num_prompts),
      vocab_size_(vocab_size),
      max_len_(max_len),
      step_tag_(step_tag) {
  if (num_prompts < 0 || vocab_size < 1 || max_len < 1) {
    throw std::invalid_argument("policy dimensions must be positive");
  }
  if (logits_.rows() != static_cast<Eigen::Index>(num_prompts) * max_len ||
      logits_.cols() != vocab_size) {
    throw std::invalid_argument("logit matrix shape does not match (prompts * L) x V");
  }
  if (!logits_.allFinite()) throw NonFiniteError("policy logits must be finite");
}

void PolicyParams::check_prompt(int prompt_id) const {
  if (prompt_id < 0 || prompt_id >= num_prompts_) {
    throw std::out_of_range("prompt id " + std::to_string(prompt_id) + " not in policy");
  }
}

void PolicyParams::check_response(const ResponseSeq& y) const {
  if (static_cast<int>(y.size()) != max_len_) {
    throw std::invalid_argument("response length must equal L");
  }
  for (int tok : y.tokens) {
    if (tok < 0 || tok >= vocab_size_) throw std::out_of_range("token outside vocabulary");
  }
}

LogitMatrix PolicyParams::log_probs(int prompt_id) const { return log_softmax_rows(block(prompt_id)); }

PolicyParams PolicyParams::with_step_tag(std::uint64_t tag) const {
  PolicyParams out = *this;
  out.step_tag_ = tag;
  return out;
}

ResponseSeq sample_response(const PolicyParams& params, int prompt_id, Rng& rng) {
  const LogitMatrix probs = softmax_rows(params.block(prompt_id));
  ResponseSeq y;
  y.tokens.resize(params.max_len());
  for (int t = 0; t < params.max_len(); ++t) {
    const double u = rng.uniform();
    double acc = 0.0;
    int tok = params.vocab_size() - 1;
    for (int v = 0; v < params.vocab_size(); ++v) {
      acc += probs(t, v);
      if (u < acc) {
        tok = v;
        break;
      }
    }
    y.tokens[t] = tok;
  }
  return y;
}

Eigen::VectorXd token_log_probs(const PolicyParams& params, int prompt_id, const ResponseSeq& y) {
  params.check_response(y);
  const LogitMatrix lp = params.log_probs(prompt_id);
  Eigen::VectorXd out(params.max_len());
  for (int t = 0; t < params.max_len(); ++t) out[t] = lp(t, y[t]);
  return out;
}

double log_prob(const PolicyParams& params, int prompt_id, const ResponseSeq& y) {
  return token_log_probs(params, prompt_id, y).sum();
}

double ratio(const PolicyParams& current, double behavior_log_prob, int prompt_id,
             const ResponseSeq& y) {
  if (!std::isfinite(behavior_log_prob)) {
    throw RatioOverflowError("behavior log-probability is not finite; sample must be rejected");
  }
  return std::exp(log_prob(current, prompt_id, y) - behavior_log_prob);
}

Eigen::VectorXd token_ratios(const PolicyParams& current,
                             const Eigen::Ref<const Eigen::VectorXd>& behavior_token_log_probs,
                             int prompt_id, const ResponseSeq& y) {
  if (!behavior_token_log_probs.allFinite()) {
    throw RatioOverflowError("behavior token log-probability is not finite");
  }
  return exact_exp((token_log_probs(current, prompt_id, y) - behavior_token_log_probs).array());
}

double exact_kl(const PolicyParams& p, const PolicyParams& q, int prompt_id) {
  check_same_shape(p, q);
  return kl_rows(p.log_probs(prompt_id), q.log_probs(prompt_id));
}

double exact_entropy(const PolicyParams& p, int prompt_id) {
  return entropy_rows(p.log_probs(prompt_id));
}

Eigen::VectorXd sequence_probabilities(const PolicyParams& params, int prompt_id) {
  const std::uint64_t n = response_space_size(params.vocab_size(), params.max_len());
  const LogitMatrix probs = softmax_rows(params.block(prompt_id));
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  out[0] = 1.0;
  Eigen::Index filled = 1;
  const int V = params.vocab_size();
  // Expand one position at a time; index order matches sequence_index.
  for (int t = 0; t < params.max_len(); ++t) {
    for (Eigen::Index i = filled - 1; i >= 0; --i) {
      const double base = out[i];
      for (int v = V - 1; v >= 0; --v) out[i * V + v] = base * probs(t, v);
    }
    filled *= V;
  }
  return out;
}

double exact_tv(const PolicyParams& p, const PolicyParams& q, int prompt_id) {
  check_same_shape(p, q);
  return 0.5 * (sequence_probabilities(p, prompt_id) - sequence_probabilities(q, prompt_id))
                   .cwiseAbs()
                   .sum();
}

PolicyParams apply_update(const PolicyParams& params, const PolicyGradient& gradient,
                          double learning_rate) {
  if (gradient.rows() != params.logits().rows() || gradient.cols() != params.logits().cols()) {
    throw std::invalid_argument("gradient shape does not match parameters");
  }
  if (!gradient.allFinite() || !std::isfinite(learning_rate)) {
    throw NonFiniteError("non-finite gradient rejected");
  }
  LogitMatrix next = params.logits() + learning_rate * gradient;
  return PolicyParams(std::move(next), params.num_prompts(), params.vocab_size(), params.max_len(),
                      params.step_tag());
}

std::string policy_to_json(const PolicyParams& params) {
  nlohmann::json j;
  j["schema"] = kPolicySchema;
  j["prompts"] = params.num_prompts();
  j["vocab"] = params.vocab_size();
  j["length"] = params.max_len();
  j["step_tag"] = params.step_tag();
  const auto& m = params.logits();
  j["logits"] = std::vector<double>(m.data(), m.data() + m.size());
  return j.dump();
}

PolicyParams policy_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("schema").get<std::string>() != kPolicySchema) {
    throw std::runtime_error("unsupported policy schema");
  }
  const int n = j.at("prompts").get<int>();
  const int V = j.at("vocab").get<int>();
  const int L = j.at("length").get<int>();
  const auto flat = j.at("logits").get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(n) * L * V) {
    throw std::runtime_error("policy logit count does not match prompts * L * V");
  }
  LogitMatrix m = Eigen::Map<const LogitMatrix>(flat.data(), static_cast<Eigen::Index>(n) * L, V);
  return PolicyParams(std::move(m), n, V, L, j.at("step_tag").get<std::uint64_t>());
}

void save_policy(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << policy_to_json(params) << '\n';
}

PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

}  // namespace bapo
