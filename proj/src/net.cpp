#include "ttm/net.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "ttm/errors.hpp"

namespace ttm {

namespace {

constexpr double kLn2 = 0.69314718055994530942;
constexpr double kLn2Pi = 1.8378770664093454836;
constexpr double kLambdaClamp = 1e-6;
constexpr double kCbTaylorWindow = 1e-3;

Eigen::MatrixXd leaky(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Eigen::MatrixXd leaky_derivative(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
}

// Class index map for prototype computation; throws when a validation label
// has no training exemplar.
std::map<int, int> class_index_map(const std::vector<int>& train_labels,
                                   const std::vector<int>& val_labels) {
  std::map<int, int> classes;
  for (int label : train_labels) {
    classes.emplace(label, 0);
  }
  int next = 0;
  for (auto& [label, index] : classes) {
    index = next++;
  }
  for (int label : val_labels) {
    if (classes.find(label) == classes.end()) {
      throw std::invalid_argument("prototypical loss: validation label " +
                                  std::to_string(label) + " absent from training half");
    }
  }
  return classes;
}

}  // namespace

PrototypeModel build_prototypes(const Eigen::MatrixXd& train_u,
                                const std::vector<int>& train_labels,
                                const std::vector<int>& val_labels) {
  PrototypeModel proto;
  proto.classes = class_index_map(train_labels, val_labels);
  const Eigen::Index C = static_cast<Eigen::Index>(proto.classes.size());
  proto.centers = Eigen::MatrixXd::Zero(train_u.rows(), C);
  proto.counts = Eigen::VectorXd::Zero(C);
  for (Eigen::Index n = 0; n < train_u.cols(); ++n) {
    const int c = proto.classes.at(train_labels[static_cast<size_t>(n)]);
    proto.centers.col(c) += train_u.col(n);
    proto.counts[c] += 1.0;
  }
  for (Eigen::Index c = 0; c < C; ++c) {
    proto.centers.col(c) /= proto.counts[c];
  }
  return proto;
}

Eigen::MatrixXd prototype_probabilities(const PrototypeModel& proto,
                                        const Eigen::MatrixXd& val_u) {
  const Eigen::Index C = proto.centers.cols();
  Eigen::MatrixXd logits(C, val_u.cols());
  for (Eigen::Index n = 0; n < val_u.cols(); ++n) {
    for (Eigen::Index c = 0; c < C; ++c) {
      logits(c, n) = -(val_u.col(n) - proto.centers.col(c)).squaredNorm();
    }
  }
  Eigen::MatrixXd probs(C, val_u.cols());
  for (Eigen::Index n = 0; n < val_u.cols(); ++n) {
    const double row_max = logits.col(n).maxCoeff();
    probs.col(n) = (logits.col(n).array() - row_max).exp();
    probs.col(n) /= probs.col(n).sum();
  }
  return probs;
}

DenseNetwork::DenseNetwork(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) {
    throw std::invalid_argument("DenseNetwork: need at least input and output widths");
  }
  for (int w : widths_) {
    if (w < 1) throw std::invalid_argument("DenseNetwork: widths must be >= 1");
  }
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    weights_.emplace_back(Eigen::MatrixXd::Zero(widths_[l + 1], widths_[l]));
    biases_.emplace_back(Eigen::VectorXd::Zero(widths_[l + 1]));
  }
}

DenseNetwork DenseNetwork::randomized(std::vector<int> widths, RandomSource& rng) {
  DenseNetwork net(std::move(widths));
  for (size_t l = 0; l < net.weights_.size(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(net.widths_[l]));
    for (Eigen::Index j = 0; j < net.weights_[l].cols(); ++j) {
      for (Eigen::Index i = 0; i < net.weights_[l].rows(); ++i) {
        net.weights_[l](i, j) = scale * rng.normal();
      }
    }
  }
  return net;
}

DenseNetwork::Forward DenseNetwork::forward(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_width()) {
    throw std::invalid_argument("DenseNetwork: input width mismatch (" +
                                std::to_string(x.rows()) + " vs " +
                                std::to_string(input_width()) + ")");
  }
  Forward state;
  state.inputs.reserve(weights_.size());
  state.preacts.reserve(weights_.size());
  Eigen::MatrixXd activation = x;
  for (size_t l = 0; l < weights_.size(); ++l) {
    state.inputs.push_back(activation);
    Eigen::MatrixXd z = (weights_[l] * activation).colwise() + biases_[l];
    state.preacts.push_back(z);
    activation = (l + 1 == weights_.size()) ? z : leaky(z);
  }
  state.output = std::move(activation);
  return state;
}

Eigen::MatrixXd DenseNetwork::evaluate(const Eigen::MatrixXd& x) const {
  return forward(x).output;
}

DenseNetwork::Grads DenseNetwork::zero_grads() const {
  Grads grads;
  for (size_t l = 0; l < weights_.size(); ++l) {
    grads.weights.emplace_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
    grads.biases.emplace_back(Eigen::VectorXd::Zero(biases_[l].size()));
  }
  return grads;
}

Eigen::MatrixXd DenseNetwork::backward(const Forward& state, const Eigen::MatrixXd& d_output,
                                       Grads& grads) const {
  if (state.inputs.size() != weights_.size()) {
    throw std::invalid_argument("DenseNetwork::backward: forward state missing");
  }
  Eigen::MatrixXd delta = d_output;
  for (size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 != weights_.size()) {
      delta = delta.cwiseProduct(leaky_derivative(state.preacts[l]));
    }
    grads.weights[l] += delta * state.inputs[l].transpose();
    grads.biases[l] += delta.rowwise().sum();
    delta = weights_[l].transpose() * delta;
  }
  return delta;
}

EncodedBatch encode_batch(const DenseNetwork& encoder, const Eigen::MatrixXd& x) {
  if (encoder.output_width() % 2 != 0) {
    throw std::invalid_argument("encode_batch: encoder output width must be even");
  }
  EncodedBatch out;
  out.state = encoder.forward(x);
  const Eigen::Index d = encoder.output_width() / 2;
  out.m = out.state.output.topRows(d);
  out.log_var = out.state.output.bottomRows(d);
  out.s = (0.5 * out.log_var).array().exp();
  return out;
}

EmbeddingPosterior encode(const Eigen::VectorXd& x, const DenseNetwork& encoder) {
  const EncodedBatch batch = encode_batch(encoder, x);
  return EmbeddingPosterior(batch.m.col(0), batch.s.col(0));
}

EmbeddingSample sample_embedding(const EmbeddingPosterior& post, const Eigen::VectorXd& noise) {
  if (noise.size() != post.m.size()) {
    throw std::invalid_argument("sample_embedding: noise dimension mismatch");
  }
  if (!noise.allFinite()) {
    throw std::invalid_argument("sample_embedding: noise must be finite");
  }
  EmbeddingSample sample;
  sample.noise = noise;
  sample.u = post.m + post.s.cwiseProduct(noise);
  return sample;
}

double cb_log_norm(double lambda) {
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(lambda - 0.5) > kCbTaylorWindow) {
    return std::log(2.0 * std::atanh(t) / t);
  }
  const double t2 = t * t;
  return kLn2 + t2 * (1.0 / 3.0 +
                      t2 * (13.0 / 90.0 + t2 * (251.0 / 2835.0 + t2 * (3551.0 / 56700.0))));
}

double cb_log_norm_derivative(double lambda) {
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(lambda - 0.5) > kCbTaylorWindow) {
    return -2.0 * (1.0 / ((1.0 - t * t) * std::atanh(t)) - 1.0 / t);
  }
  const double t2 = t * t;
  const double dt = t * (2.0 / 3.0 +
                         t2 * (26.0 / 45.0 + t2 * (502.0 / 945.0 + t2 * (7102.0 / 14175.0))));
  return -2.0 * dt;
}

double cb_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  if (x.size() != lambda.size()) {
    throw std::invalid_argument("cb_log_likelihood: dimension mismatch");
  }
  double total = 0.0;
  for (Eigen::Index p = 0; p < x.size(); ++p) {
    const double xv = x[p];
    const double lv = lambda[p];
    if (!(xv >= 0.0 && xv <= 1.0)) {
      throw std::invalid_argument("cb_log_likelihood: x outside [0,1]");
    }
    if (!(lv > 0.0 && lv < 1.0)) {
      throw std::invalid_argument("cb_log_likelihood: lambda outside (0,1)");
    }
    total += cb_log_norm(lv) + xv * std::log(lv) + (1.0 - xv) * std::log(1.0 - lv);
  }
  return total;
}

double prototypical_loss(const Eigen::MatrixXd& train_u, const std::vector<int>& train_labels,
                         const Eigen::MatrixXd& val_u, const std::vector<int>& val_labels) {
  if (train_u.cols() != static_cast<Eigen::Index>(train_labels.size()) ||
      val_u.cols() != static_cast<Eigen::Index>(val_labels.size()) ||
      train_u.rows() != val_u.rows() || val_u.cols() == 0) {
    throw std::invalid_argument("prototypical_loss: inconsistent shapes");
  }
  const PrototypeModel proto = build_prototypes(train_u, train_labels, val_labels);
  const Eigen::MatrixXd probs = prototype_probabilities(proto, val_u);
  double loss = 0.0;
  for (Eigen::Index n = 0; n < val_u.cols(); ++n) {
    const int c = proto.classes.at(val_labels[static_cast<size_t>(n)]);
    loss -= std::log(probs(c, n));
  }
  return loss / static_cast<double>(val_u.cols());
}

AdamState make_adam(const DenseNetwork& net, double step_size) {
  AdamState state;
  state.step_size = step_size;
  for (size_t l = 0; l < net.layer_count(); ++l) {
    state.m_weights.emplace_back(
        Eigen::MatrixXd::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
    state.v_weights.emplace_back(
        Eigen::MatrixXd::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
    state.m_biases.emplace_back(Eigen::VectorXd::Zero(net.biases()[l].size()));
    state.v_biases.emplace_back(Eigen::VectorXd::Zero(net.biases()[l].size()));
  }
  return state;
}

void adam_step(DenseNetwork& net, const DenseNetwork::Grads& grads, AdamState& state) {
  if (grads.weights.size() != net.layer_count() ||
      state.m_weights.size() != net.layer_count()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t l = 0; l < net.layer_count(); ++l) {
    if (grads.weights[l].rows() != net.weights()[l].rows() ||
        grads.weights[l].cols() != net.weights()[l].cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    }
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = state.beta1 * m + (1.0 - state.beta1) * grad;
      v = state.beta2 * v + (1.0 - state.beta2) * grad.array().square().matrix();
      const auto m_hat = (m / bias1).array();
      const auto v_hat = (v / bias2).array();
      param.array() += state.step_size * m_hat / (v_hat.sqrt() + state.epsilon);
    };
    update(net.weights()[l], grads.weights[l], state.m_weights[l], state.v_weights[l]);
    update(net.biases()[l], grads.biases[l], state.m_biases[l], state.v_biases[l]);
  }
}

ObjectiveEval evaluate_task_objective(const DenseNetwork& encoder, const DenseNetwork& decoder,
                                      const ThemeSet& themes,
                                      const Eigen::MatrixXd& x_train,
                                      const std::vector<int>& y_train,
                                      const Eigen::MatrixXd& x_val,
                                      const std::vector<int>& y_val,
                                      const ObjectiveContext& context, bool with_grads) {
  const Eigen::Index D = themes.dim();
  const Eigen::Index K = themes.size();
  const Eigen::Index n_train = x_train.cols();
  const Eigen::Index n_val = x_val.cols();
  if (encoder.output_width() != 2 * D) {
    throw std::invalid_argument("evaluate_task_objective: encoder must emit 2*D outputs");
  }
  if (decoder.input_width() != D || decoder.output_width() != x_val.rows()) {
    throw std::invalid_argument("evaluate_task_objective: decoder widths do not match data");
  }
  if (context.r_val.rows() != n_val || context.r_val.cols() != K ||
      context.noise_train.cols() != n_train || context.noise_val.cols() != n_val ||
      context.noise_train.rows() != D || context.noise_val.rows() != D) {
    throw std::invalid_argument("evaluate_task_objective: context shapes inconsistent");
  }

  const ObjectiveWeights& w = context.weights;
  ObjectiveEval eval;

  const EncodedBatch enc_train = encode_batch(encoder, x_train);
  const EncodedBatch enc_val = encode_batch(encoder, x_val);
  const Eigen::MatrixXd u_train = enc_train.m + enc_train.s.cwiseProduct(context.noise_train);
  const Eigen::MatrixXd u_val = enc_val.m + enc_val.s.cwiseProduct(context.noise_val);

  // Validation-half LDA bound under the frozen posterior.
  std::vector<EmbeddingPosterior> posts_val;
  posts_val.reserve(static_cast<size_t>(n_val));
  for (Eigen::Index n = 0; n < n_val; ++n) {
    posts_val.emplace_back(enc_val.m.col(n), enc_val.s.col(n));
  }
  const TaskPosterior tp(context.gamma, context.r_val);
  eval.elbo = lda_elbo(posts_val, themes, tp);

  // Reconstruction through the decoder.
  const DenseNetwork::Forward dec_state = decoder.forward(u_val);
  Eigen::MatrixXd lambda =
      dec_state.output.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  Eigen::MatrixXd clamped_mask = Eigen::MatrixXd::Ones(lambda.rows(), lambda.cols());
  for (Eigen::Index c = 0; c < lambda.cols(); ++c) {
    for (Eigen::Index r = 0; r < lambda.rows(); ++r) {
      if (lambda(r, c) < kLambdaClamp) {
        lambda(r, c) = kLambdaClamp;
        clamped_mask(r, c) = 0.0;
      } else if (lambda(r, c) > 1.0 - kLambdaClamp) {
        lambda(r, c) = 1.0 - kLambdaClamp;
        clamped_mask(r, c) = 0.0;
      }
    }
  }
  eval.reconstruction = 0.0;
  for (Eigen::Index n = 0; n < n_val; ++n) {
    eval.reconstruction += cb_log_likelihood(x_val.col(n), lambda.col(n));
  }

  // Prototypical classification log-likelihood (sum over validation points).
  const PrototypeModel proto = build_prototypes(u_train, y_train, y_val);
  const Eigen::MatrixXd probs = prototype_probabilities(proto, u_val);
  eval.classification = 0.0;
  for (Eigen::Index n = 0; n < n_val; ++n) {
    const int c = proto.classes.at(y_val[static_cast<size_t>(n)]);
    eval.classification += std::log(probs(c, n));
  }

  // -E ln q(u) = sum 1/2 (1 + ln 2 pi + log_var).
  eval.qu_entropy =
      0.5 * (enc_val.log_var.array() + 1.0 + kLn2Pi).sum();

  eval.value = w.lda * eval.elbo.total + w.reconstruction * eval.reconstruction +
               w.classification * eval.classification + w.entropy * eval.qu_entropy;

  if (!with_grads) {
    return eval;
  }

  eval.encoder_grads = encoder.zero_grads();
  eval.decoder_grads = decoder.zero_grads();

  Eigen::MatrixXd d_m_val = Eigen::MatrixXd::Zero(D, n_val);
  Eigen::MatrixXd d_logvar_val = Eigen::MatrixXd::Zero(D, n_val);
  Eigen::MatrixXd d_u_val = Eigen::MatrixXd::Zero(D, n_val);
  Eigen::MatrixXd d_u_train = Eigen::MatrixXd::Zero(D, n_train);

  // LDA term: d/dm of -1/2 (m-mu)^T Sigma^-1 (m-mu) and the trace term in
  // the log-variances.
  std::vector<Eigen::VectorXd> sigma_inv_diag(static_cast<size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(D, D);
    themes.theme(k).factor().triangularView<Eigen::Lower>().solveInPlace(identity);
    sigma_inv_diag[static_cast<size_t>(k)] = identity.colwise().squaredNorm().transpose();
  }
  for (Eigen::Index n = 0; n < n_val; ++n) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double r = context.r_val(n, k);
      if (r == 0.0) continue;
      const TaskTheme& theme = themes.theme(k);
      Eigen::VectorXd diff = enc_val.m.col(n) - theme.mean();
      theme.factor().triangularView<Eigen::Lower>().solveInPlace(diff);
      theme.factor().transpose().triangularView<Eigen::Upper>().solveInPlace(diff);
      d_m_val.col(n) -= w.lda * r * diff;
      d_logvar_val.col(n).array() -= 0.5 * w.lda * r *
                                     enc_val.s.col(n).array().square() *
                                     sigma_inv_diag[static_cast<size_t>(k)].array();
    }
  }

  // Reconstruction: d/d raw = (x - lambda) + lnC'(lambda) lambda (1-lambda),
  // zeroed where the squashed output was clamped.
  Eigen::MatrixXd d_raw(lambda.rows(), n_val);
  for (Eigen::Index n = 0; n < n_val; ++n) {
    for (Eigen::Index p = 0; p < lambda.rows(); ++p) {
      const double lv = lambda(p, n);
      const double grad = (x_val(p, n) - lv) + cb_log_norm_derivative(lv) * lv * (1.0 - lv);
      d_raw(p, n) = w.reconstruction * grad * clamped_mask(p, n);
    }
  }
  d_u_val += decoder.backward(dec_state, d_raw, eval.decoder_grads);

  // Classification: logits(c, n) = -|u_n - proto_c|^2.
  const Eigen::Index C = proto.centers.cols();
  Eigen::MatrixXd d_proto = Eigen::MatrixXd::Zero(D, C);
  for (Eigen::Index n = 0; n < n_val; ++n) {
    const int target = proto.classes.at(y_val[static_cast<size_t>(n)]);
    for (Eigen::Index c = 0; c < C; ++c) {
      const double d_logit =
          w.classification * ((c == target ? 1.0 : 0.0) - probs(c, n));
      const Eigen::VectorXd diff = u_val.col(n) - proto.centers.col(c);
      d_u_val.col(n) += d_logit * (-2.0) * diff;
      d_proto.col(c) += d_logit * 2.0 * diff;
    }
  }
  for (Eigen::Index n = 0; n < n_train; ++n) {
    const int c = proto.classes.at(y_train[static_cast<size_t>(n)]);
    d_u_train.col(n) += d_proto.col(c) / proto.counts[c];
  }

  // q(u) entropy: d/d log_var = 1/2 per component.
  d_logvar_val.array() += 0.5 * w.entropy;

  // Reparameterization: u = m + s .* eps with s = exp(log_var / 2).
  d_m_val += d_u_val;
  d_logvar_val.array() +=
      d_u_val.array() * 0.5 * enc_val.s.array() * context.noise_val.array();
  Eigen::MatrixXd d_m_train = d_u_train;
  Eigen::MatrixXd d_logvar_train =
      (d_u_train.array() * 0.5 * enc_train.s.array() * context.noise_train.array()).matrix();

  Eigen::MatrixXd d_enc_val(2 * D, n_val);
  d_enc_val.topRows(D) = d_m_val;
  d_enc_val.bottomRows(D) = d_logvar_val;
  encoder.backward(enc_val.state, d_enc_val, eval.encoder_grads);

  Eigen::MatrixXd d_enc_train(2 * D, n_train);
  d_enc_train.topRows(D) = d_m_train;
  d_enc_train.bottomRows(D) = d_logvar_train;
  encoder.backward(enc_train.state, d_enc_train, eval.encoder_grads);

  return eval;
}

}  // namespace ttm
