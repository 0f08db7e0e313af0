#include "convqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "convqa/errors.hpp"

namespace convqa {

namespace {

RecurrentWeights zero_rnn(int hidden, int embed) {
  return {Matrix(hidden, embed), Matrix(hidden, hidden),
          std::vector<double>(hidden, 0.0)};
}

std::span<double> as_span(Matrix& m) { return m.data; }
std::span<double> as_span(std::vector<double>& v) { return v; }

}  // namespace

ModelParams zeros_like(const ModelDims& dims) {
  const int h = dims.hidden_dim;
  const int d = dims.embed_dim;
  ModelParams p;
  p.dims = dims;
  p.embedding = Matrix(dims.vocab_size, d);
  p.passage_rnn = zero_rnn(h, d);
  p.question_rnn = zero_rnn(h, d);
  p.attention = Matrix(h, h);
  p.start_scorer.assign(h, 0.0);
  p.end_scorer.assign(h, 0.0);
  p.class_scorer = Matrix(kNumClasses, 2 * h);
  p.class_bias.assign(kNumClasses, 0.0);
  p.match_current.assign(h, 0.0);
  p.match_answer.assign(h, 0.0);
  p.match_history.assign(h, 0.0);
  return p;
}

void for_each_tensor(ModelParams& p,
                     const std::function<void(std::string_view, std::span<double>)>& fn) {
  fn("embedding", as_span(p.embedding));
  fn("passage_rnn.input", as_span(p.passage_rnn.input));
  fn("passage_rnn.hidden", as_span(p.passage_rnn.hidden));
  fn("passage_rnn.bias", as_span(p.passage_rnn.bias));
  fn("question_rnn.input", as_span(p.question_rnn.input));
  fn("question_rnn.hidden", as_span(p.question_rnn.hidden));
  fn("question_rnn.bias", as_span(p.question_rnn.bias));
  fn("attention", as_span(p.attention));
  fn("start_scorer", as_span(p.start_scorer));
  fn("end_scorer", as_span(p.end_scorer));
  fn("class_scorer", as_span(p.class_scorer));
  fn("class_bias", as_span(p.class_bias));
  fn("match_current", as_span(p.match_current));
  fn("match_answer", as_span(p.match_answer));
  fn("match_history", as_span(p.match_history));
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(std::string_view, std::span<const double>)>& fn) {
  auto& mp = const_cast<ModelParams&>(p);
  for_each_tensor(mp, [&](std::string_view name, std::span<double> t) {
    fn(name, std::span<const double>(t.data(), t.size()));
  });
}

void for_each_tensor_pair(
    ModelParams& a, const ModelParams& b,
    const std::function<void(std::string_view, std::span<double>, std::span<const double>)>& fn) {
  if (!(a.dims == b.dims)) throw InputError("parameter dimension mismatch");
  std::vector<std::span<const double>> rhs;
  for_each_tensor(b, [&](std::string_view, std::span<const double> t) { rhs.push_back(t); });
  std::size_t i = 0;
  for_each_tensor(a, [&](std::string_view name, std::span<double> t) {
    fn(name, t, rhs[i++]);
  });
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](std::string_view, std::span<const double> t) { n += t.size(); });
  return n;
}

bool all_finite(const ModelParams& p) {
  bool ok = true;
  for_each_tensor(p, [&](std::string_view, std::span<const double> t) {
    for (double x : t) ok = ok && std::isfinite(x);
  });
  return ok;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.vocab_size <= 0 || dims.embed_dim <= 0 || dims.hidden_dim <= 0 ||
      dims.max_span_len <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  ModelParams p = zeros_like(dims);
  std::mt19937_64 rng(seed);
  const int d = dims.embed_dim;
  const int h = dims.hidden_dim;
  auto fill = [&](std::span<double> t, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-s, s);
    for (double& x : t) x = dist(rng);
  };
  fill(as_span(p.embedding), d);
  for (auto* rnn : {&p.passage_rnn, &p.question_rnn}) {
    fill(as_span(rnn->input), d);
    fill(as_span(rnn->hidden), h);
    fill(as_span(rnn->bias), h);
  }
  fill(as_span(p.attention), h);
  fill(as_span(p.start_scorer), h);
  fill(as_span(p.end_scorer), h);
  fill(as_span(p.class_scorer), 2 * h);
  fill(as_span(p.class_bias), 2 * h);
  fill(as_span(p.match_current), d);
  fill(as_span(p.match_answer), d);
  fill(as_span(p.match_history), d);
  return p;
}

// --- Forward ---------------------------------------------------------------------

namespace {

void check_ids(std::span<const int> ids, int vocab, const char* what) {
  if (ids.empty()) throw InputError(std::string(what) + " token list is empty");
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw InputError(std::string(what) + " token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

struct MatchInput {
  const std::vector<int>* flags;
  const std::vector<double>* current;
  const std::vector<double>* answer;
  const std::vector<double>* history;
};

Matrix run_rnn(const RecurrentWeights& w, const Matrix& embedding,
               std::span<const int> ids, const MatchInput* match = nullptr) {
  const int h = w.hidden.rows;
  const int d = w.input.cols;
  const int steps = static_cast<int>(ids.size());
  Matrix states(steps, h);
  std::vector<double> pre(h);
  for (int t = 0; t < steps; ++t) {
    const auto x = embedding.row(ids[t]);
    for (int i = 0; i < h; ++i) {
      double a = w.bias[i];
      if (match) {
        const int f = (*match->flags)[t];
        if (f & 1) a += (*match->current)[i];
        if (f & 2) a += (*match->answer)[i];
        if (f & 4) a += (*match->history)[i];
      }
      const double* wi = &w.input.data[static_cast<std::size_t>(i) * d];
      for (int k = 0; k < d; ++k) a += wi[k] * x[k];
      if (t > 0) {
        const double* ui = &w.hidden.data[static_cast<std::size_t>(i) * h];
        const auto prev = states.row(t - 1);
        for (int k = 0; k < h; ++k) a += ui[k] * prev[k];
      }
      pre[i] = a;
    }
    auto out = states.row(t);
    for (int i = 0; i < h; ++i) out[i] = std::tanh(pre[i]);
  }
  return states;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

ForwardTrace forward(const ModelParams& params, std::span<const int> passage_ids,
                     std::span<const int> question_ids) {
  const int vocab = params.dims.vocab_size;
  check_ids(passage_ids, vocab, "passage");
  check_ids(question_ids, vocab, "question");
  const int h = params.dims.hidden_dim;

  ForwardTrace tr;
  tr.passage_ids.assign(passage_ids.begin(), passage_ids.end());
  tr.question_ids.assign(question_ids.begin(), question_ids.end());
  // Split the augmented question into history / last answer / current question.
  const auto q_end = question_ids.end();
  auto cur_begin = question_ids.begin();
  if (auto it = std::find(question_ids.rbegin(), question_ids.rend(), Vocab::kQuestionSep);
      it != question_ids.rend()) {
    cur_begin = it.base();
  }
  auto ans_begin = cur_begin;
  if (auto it = std::find(std::make_reverse_iterator(cur_begin), question_ids.rend(),
                          Vocab::kAnswerSep);
      it != question_ids.rend()) {
    ans_begin = it.base();
  }
  auto sorted = [](auto b, auto e) {
    std::vector<int> v(b, e);
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto history = sorted(question_ids.begin(), ans_begin);
  const auto answer = sorted(ans_begin, cur_begin);
  const auto current = sorted(cur_begin, q_end);
  auto has = [](const std::vector<int>& v, int id) {
    return std::binary_search(v.begin(), v.end(), id);
  };
  tr.passage_match.resize(passage_ids.size());
  for (std::size_t j = 0; j < passage_ids.size(); ++j) {
    const int id = passage_ids[j];
    if (id < Vocab::kNumReserved) continue;
    tr.passage_match[j] =
        (has(current, id) ? 1 : 0) | (has(answer, id) ? 2 : 0) | (has(history, id) ? 4 : 0);
  }
  const MatchInput match{&tr.passage_match, &params.match_current, &params.match_answer,
                         &params.match_history};
  tr.passage_states = run_rnn(params.passage_rnn, params.embedding, passage_ids, &match);
  tr.question_states = run_rnn(params.question_rnn, params.embedding, question_ids);

  const auto last = tr.question_states.row(tr.question_states.rows - 1);
  tr.summary.assign(last.begin(), last.end());
  tr.projected.assign(h, 0.0);
  for (int i = 0; i < h; ++i) {
    double a = 0.0;
    for (int k = 0; k < h; ++k) a += params.attention(i, k) * tr.summary[k];
    tr.projected[i] = a;
  }

  const int n = tr.passage_states.rows;
  tr.start_logits.assign(n, 0.0);
  tr.end_logits.assign(n, 0.0);
  std::vector<double> scores(n, 0.0);
  for (int j = 0; j < n; ++j) {
    const auto pj = tr.passage_states.row(j);
    double s = 0.0, e = 0.0, a = 0.0;
    for (int k = 0; k < h; ++k) {
      const double pg = pj[k] * tr.projected[k];
      s += params.start_scorer[k] * pg;
      e += params.end_scorer[k] * pg;
      a += pg;
    }
    tr.start_logits[j] = s;
    tr.end_logits[j] = e;
    scores[j] = a;
  }
  tr.attention_weights = softmax(scores);
  tr.attended.assign(h, 0.0);
  for (int j = 0; j < n; ++j) {
    const auto pj = tr.passage_states.row(j);
    for (int k = 0; k < h; ++k) tr.attended[k] += tr.attention_weights[j] * pj[k];
  }

  tr.class_logits.assign(kNumClasses, 0.0);
  for (int c = 0; c < kNumClasses; ++c) {
    double a = params.class_bias[c];
    for (int k = 0; k < h; ++k) {
      a += params.class_scorer(c, k) * tr.summary[k];
      a += params.class_scorer(c, h + k) * tr.attended[k];
    }
    tr.class_logits[c] = a;
  }
  return tr;
}

// --- Loss / backward -------------------------------------------------------------------

namespace {

void check_target(const ForwardTrace& trace, const SpanTarget& gold) {
  if (gold.type != AnswerType::span) return;
  const int n = static_cast<int>(trace.start_logits.size());
  if (gold.start < 0 || gold.end < gold.start || gold.end >= n) {
    throw SupervisionError("gold span (" + std::to_string(gold.start) + ", " +
                           std::to_string(gold.end) + ") outside passage of length " +
                           std::to_string(n));
  }
}

void bptt(const RecurrentWeights& w, const Matrix& embedding, std::span<const int> ids,
          const Matrix& states, Matrix& dstates, RecurrentWeights& gw, Matrix& gemb,
          const std::vector<int>* flags = nullptr, std::vector<double>* gcurrent = nullptr,
          std::vector<double>* ganswer = nullptr, std::vector<double>* ghistory = nullptr) {
  const int h = w.hidden.rows;
  const int d = w.input.cols;
  std::vector<double> carry(h, 0.0);
  std::vector<double> da(h);
  for (int t = static_cast<int>(ids.size()) - 1; t >= 0; --t) {
    const auto ht = states.row(t);
    auto dh = dstates.row(t);
    for (int i = 0; i < h; ++i) da[i] = (dh[i] + carry[i]) * (1.0 - ht[i] * ht[i]);
    if (flags) {
      const int f = (*flags)[t];
      if (f & 1) {
        for (int i = 0; i < h; ++i) (*gcurrent)[i] += da[i];
      }
      if (f & 2) {
        for (int i = 0; i < h; ++i) (*ganswer)[i] += da[i];
      }
      if (f & 4) {
        for (int i = 0; i < h; ++i) (*ghistory)[i] += da[i];
      }
    }

    const auto x = embedding.row(ids[t]);
    auto gx = gemb.row(ids[t]);
    for (int i = 0; i < h; ++i) {
      const double g = da[i];
      if (g == 0.0) continue;
      gw.bias[i] += g;
      double* gi = &gw.input.data[static_cast<std::size_t>(i) * d];
      const double* wi = &w.input.data[static_cast<std::size_t>(i) * d];
      for (int k = 0; k < d; ++k) {
        gi[k] += g * x[k];
        gx[k] += wi[k] * g;
      }
    }
    std::fill(carry.begin(), carry.end(), 0.0);
    if (t > 0) {
      const auto prev = states.row(t - 1);
      for (int i = 0; i < h; ++i) {
        const double g = da[i];
        if (g == 0.0) continue;
        double* gu = &gw.hidden.data[static_cast<std::size_t>(i) * h];
        const double* ui = &w.hidden.data[static_cast<std::size_t>(i) * h];
        for (int k = 0; k < h; ++k) {
          gu[k] += g * prev[k];
          carry[k] += ui[k] * g;
        }
      }
    }
  }
}

}  // namespace

double loss(const ForwardTrace& trace, const SpanTarget& gold) {
  check_target(trace, gold);
  const auto lc = log_softmax(trace.class_logits);
  if (gold.type != AnswerType::span) return -lc[static_cast<int>(gold.type)];
  const auto ls = log_softmax(trace.start_logits);
  const auto le = log_softmax(trace.end_logits);
  return -ls[gold.start] - le[gold.end] - lc[static_cast<int>(AnswerType::span)];
}

void backward_into(const ModelParams& params, const ForwardTrace& trace,
                   const SpanTarget& gold, ModelParams& grads) {
  check_target(trace, gold);
  const int h = params.dims.hidden_dim;
  const int n = trace.passage_states.rows;

  std::vector<double> dclass = softmax(trace.class_logits);
  dclass[static_cast<int>(gold.type)] -= 1.0;
  std::vector<double> dstart(n, 0.0), dend(n, 0.0);
  if (gold.type == AnswerType::span) {
    dstart = softmax(trace.start_logits);
    dend = softmax(trace.end_logits);
    dstart[gold.start] -= 1.0;
    dend[gold.end] -= 1.0;
  }

  Matrix dpassage(n, h);
  std::vector<double> dproj(h, 0.0);
  std::vector<double> dsummary(h, 0.0);
  std::vector<double> dattended(h, 0.0);

  // Class head.
  for (int c = 0; c < kNumClasses; ++c) {
    const double g = dclass[c];
    grads.class_bias[c] += g;
    for (int k = 0; k < h; ++k) {
      grads.class_scorer(c, k) += g * trace.summary[k];
      grads.class_scorer(c, h + k) += g * trace.attended[k];
      dsummary[k] += params.class_scorer(c, k) * g;
      dattended[k] += params.class_scorer(c, h + k) * g;
    }
  }

  // Attention readout.
  std::vector<double> dweight(n, 0.0);
  double weighted = 0.0;
  for (int j = 0; j < n; ++j) {
    const auto pj = trace.passage_states.row(j);
    double s = 0.0;
    for (int k = 0; k < h; ++k) s += dattended[k] * pj[k];
    dweight[j] = s;
    weighted += trace.attention_weights[j] * s;
  }
  for (int j = 0; j < n; ++j) {
    const double a = trace.attention_weights[j];
    const double dscore = a * (dweight[j] - weighted);
    const auto pj = trace.passage_states.row(j);
    auto dpj = dpassage.row(j);
    for (int k = 0; k < h; ++k) {
      dpj[k] += a * dattended[k] + dscore * trace.projected[k];
      dproj[k] += dscore * pj[k];
    }
  }

  // Span scorers.
  for (int j = 0; j < n; ++j) {
    const double gs = dstart[j];
    const double ge = dend[j];
    if (gs == 0.0 && ge == 0.0) continue;
    const auto pj = trace.passage_states.row(j);
    auto dpj = dpassage.row(j);
    for (int k = 0; k < h; ++k) {
      const double pg = pj[k] * trace.projected[k];
      grads.start_scorer[k] += gs * pg;
      grads.end_scorer[k] += ge * pg;
      const double du = gs * params.start_scorer[k] + ge * params.end_scorer[k];
      dpj[k] += du * trace.projected[k];
      dproj[k] += du * pj[k];
    }
  }

  // projected = attention * summary
  for (int i = 0; i < h; ++i) {
    const double g = dproj[i];
    for (int k = 0; k < h; ++k) {
      grads.attention(i, k) += g * trace.summary[k];
      dsummary[k] += params.attention(i, k) * g;
    }
  }

  Matrix dquestion(trace.question_states.rows, h);
  auto dlast = dquestion.row(dquestion.rows - 1);
  for (int k = 0; k < h; ++k) dlast[k] = dsummary[k];

  bptt(params.question_rnn, params.embedding, trace.question_ids,
       trace.question_states, dquestion, grads.question_rnn, grads.embedding);
  bptt(params.passage_rnn, params.embedding, trace.passage_ids,
       trace.passage_states, dpassage, grads.passage_rnn, grads.embedding,
       &trace.passage_match, &grads.match_current, &grads.match_answer,
       &grads.match_history);
}

ModelParams backward(const ModelParams& params, const ForwardTrace& trace,
                     const SpanTarget& gold) {
  ModelParams grads = zeros_like(params.dims);
  backward_into(params, trace, gold, grads);
  return grads;
}

// --- Optimizer -------------------------------------------------------------------------

AdamState AdamState::for_dims(const ModelDims& dims) {
  return {zeros_like(dims), zeros_like(dims), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamHyper& hyper) {
  if (!all_finite(grads)) throw NumericError("non-finite gradient");
  if (!(params.dims == grads.dims) || !(params.dims == state.m.dims)) {
    throw InputError("optimizer shape mismatch");
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));

  std::vector<std::span<double>> w, m, v;
  std::vector<std::span<const double>> g;
  for_each_tensor(params, [&](std::string_view, std::span<double> t) { w.push_back(t); });
  for_each_tensor(state.m, [&](std::string_view, std::span<double> t) { m.push_back(t); });
  for_each_tensor(state.v, [&](std::string_view, std::span<double> t) { v.push_back(t); });
  for_each_tensor(grads, [&](std::string_view, std::span<const double> t) { g.push_back(t); });
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (std::size_t i = 0; i < w[t].size(); ++i) {
      const double gi = g[t][i];
      m[t][i] = hyper.beta1 * m[t][i] + (1.0 - hyper.beta1) * gi;
      v[t][i] = hyper.beta2 * v[t][i] + (1.0 - hyper.beta2) * gi * gi;
      const double mhat = m[t][i] / c1;
      const double vhat = v[t][i] / c2;
      w[t][i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

// --- Decoding ------------------------------------------------------------------------------

std::pair<int, int> best_span(std::span<const double> start_logits,
                              std::span<const double> end_logits, int max_span_len) {
  const int n = static_cast<int>(start_logits.size());
  std::pair<int, int> best{0, 0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < n; ++s) {
    const int last = std::min(n, s + max_span_len);
    for (int e = s; e < last; ++e) {
      const double score = start_logits[s] + end_logits[e];
      if (score > best_score) {
        best_score = score;
        best = {s, e};
      }
    }
  }
  return best;
}

AnswerPrediction predict_answer(const ForwardTrace& trace,
                                const std::vector<std::string>& passage_tokens,
                                int max_span_len) {
  AnswerPrediction p;
  const auto probs = softmax(trace.class_logits);
  std::copy(probs.begin(), probs.end(), p.class_probs.begin());

  // Span wins ties; among closed classes the earlier one wins.
  int best = static_cast<int>(AnswerType::span);
  for (int c = 0; c < static_cast<int>(AnswerType::span); ++c) {
    if (p.class_probs[c] > p.class_probs[best]) best = c;
  }
  p.type = static_cast<AnswerType>(best);

  const auto [s, e] = best_span(trace.start_logits, trace.end_logits, max_span_len);
  p.start = s;
  p.end = e;
  if (p.type != AnswerType::span) {
    p.answer_text = std::string(to_string(p.type));
    return p;
  }
  std::vector<std::string> words;
  for (int i = s; i <= e && i < static_cast<int>(passage_tokens.size()); ++i) {
    words.push_back(passage_tokens[i]);
  }
  p.answer_text = join_tokens(words);
  return p;
}

}  // namespace convqa
