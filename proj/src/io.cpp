#include "ttm/io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "ttm/errors.hpp"

namespace ttm {

namespace {

constexpr char kCorpusMagic[4] = {'T', 'T', 'M', 'C'};
constexpr char kCheckpointMagic[4] = {'T', 'T', 'M', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
public:
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(const char* data, size_t n) { raw(data, n); }
  void matrix(const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        f64(m(r, c));
      }
    }
  }
  void vector(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }
  const std::string& buffer() const { return buffer_; }

private:
  void raw(const void* data, size_t n) {
    buffer_.append(static_cast<const char*>(data), n);
  }
  std::string buffer_;
};

class ByteReader {
public:
  ByteReader(const std::string& data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint8_t u8() { return read<std::uint8_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  std::int32_t i32() { return read<std::int32_t>(); }
  std::int64_t i64() { return read<std::int64_t>(); }
  double f64() { return read<double>(); }
  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64();
    }
    return m;
  }
  Eigen::VectorXd vector(Eigen::Index size) {
    Eigen::VectorXd v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = f64();
    return v;
  }
  size_t offset() const { return offset_; }
  bool exhausted() const { return offset_ >= data_.size(); }

private:
  template <typename T>
  T read() {
    if (offset_ + sizeof(T) > data_.size()) {
      throw ParseError(context_ + ": truncated at byte " + std::to_string(offset_));
    }
    T value;
    std::memcpy(&value, data_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  const std::string& data_;
  std::string context_;
  size_t offset_ = 0;
};

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(std::string(what) + ": cannot open " + path.string());
  }
  std::ostringstream contents;
  contents << in.rdbuf();
  return std::move(contents).str();
}

void write_file(const std::filesystem::path& path, const std::string& data, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ParseError(std::string(what) + ": cannot open " + path.string() + " for writing");
  }
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw ParseError(std::string(what) + ": short write to " + path.string());
  }
}

void validate_task_features(const Eigen::MatrixXd& points, const std::vector<int>& labels,
                            int label_alphabet, size_t task_index) {
  const std::string where = "task " + std::to_string(task_index);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    for (Eigen::Index c = 0; c < points.cols(); ++c) {
      const double v = points(r, c);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ParseError("corpus: " + where + " feature (" + std::to_string(r) + "," +
                         std::to_string(c) + ") = " + std::to_string(v) +
                         " outside range [0,1]");
      }
    }
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= label_alphabet) {
      throw ParseError("corpus: " + where + " label " + std::to_string(labels[i]) +
                       " outside alphabet [0," + std::to_string(label_alphabet) + ")");
    }
  }
}

TaskDataset make_corpus_task(Eigen::MatrixXd points, std::vector<int> labels,
                             int label_alphabet, size_t task_index) {
  validate_task_features(points, labels, label_alphabet, task_index);
  try {
    return TaskDataset::with_split(std::move(points), std::move(labels));
  } catch (const std::invalid_argument& err) {
    throw ParseError("corpus: task " + std::to_string(task_index) + ": " + err.what());
  }
}

CorpusFile load_corpus_binary(const std::string& data, const std::filesystem::path& path) {
  ByteReader reader(data, "corpus " + path.string());
  reader.u32();  // magic, already matched
  CorpusFile corpus;
  corpus.version = reader.u32();
  if (corpus.version != kFormatVersion) {
    throw ParseError("corpus: unsupported format version " + std::to_string(corpus.version));
  }
  corpus.data_dim = static_cast<int>(reader.u32());
  corpus.label_alphabet = static_cast<int>(reader.u32());
  const std::uint64_t task_count = reader.u64();
  if (task_count == 0) {
    throw ParseError("corpus: empty task list");
  }
  if (corpus.data_dim < 1 || corpus.label_alphabet < 1) {
    throw ParseError("corpus: bad header (data_dim, label_alphabet must be >= 1)");
  }
  for (std::uint64_t t = 0; t < task_count; ++t) {
    const std::uint64_t n = reader.u64();
    std::vector<int> labels(n);
    for (auto& label : labels) label = reader.i32();
    Eigen::MatrixXd points = reader.matrix(static_cast<Eigen::Index>(n), corpus.data_dim);
    corpus.tasks.push_back(
        make_corpus_task(std::move(points), std::move(labels), corpus.label_alphabet, t));
  }
  return corpus;
}

CorpusFile load_corpus_jsonl(const std::string& data, const std::filesystem::path& path) {
  std::istringstream in(data);
  std::string line;
  size_t line_number = 0;
  CorpusFile corpus;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& err) {
      throw ParseError("corpus " + path.string() + ": line " + std::to_string(line_number) +
                       ": " + err.what());
    }
    if (!header_seen) {
      corpus.version = parsed.value("version", 0u);
      if (corpus.version != kFormatVersion) {
        throw ParseError("corpus: unsupported format version " +
                         std::to_string(corpus.version));
      }
      corpus.data_dim = parsed.value("data_dim", 0);
      corpus.label_alphabet = parsed.value("label_alphabet", 0);
      if (corpus.data_dim < 1 || corpus.label_alphabet < 1) {
        throw ParseError("corpus: bad header (data_dim, label_alphabet must be >= 1)");
      }
      header_seen = true;
      continue;
    }
    const size_t task_index = corpus.tasks.size();
    try {
      const auto& labels_json = parsed.at("labels");
      const auto& points_json = parsed.at("points");
      std::vector<int> labels = labels_json.get<std::vector<int>>();
      if (points_json.size() != labels.size()) {
        throw ParseError("corpus: task " + std::to_string(task_index) +
                         " labels/points count mismatch");
      }
      Eigen::MatrixXd points(static_cast<Eigen::Index>(labels.size()), corpus.data_dim);
      for (size_t r = 0; r < points_json.size(); ++r) {
        const auto row = points_json[r].get<std::vector<double>>();
        if (static_cast<int>(row.size()) != corpus.data_dim) {
          throw ParseError("corpus: task " + std::to_string(task_index) + " row " +
                           std::to_string(r) + " has width " + std::to_string(row.size()) +
                           ", expected " + std::to_string(corpus.data_dim));
        }
        for (int c = 0; c < corpus.data_dim; ++c) {
          points(static_cast<Eigen::Index>(r), c) = row[static_cast<size_t>(c)];
        }
      }
      corpus.tasks.push_back(make_corpus_task(std::move(points), std::move(labels),
                                              corpus.label_alphabet, task_index));
    } catch (const nlohmann::json::exception& err) {
      throw ParseError("corpus: task " + std::to_string(task_index) + ": " + err.what());
    }
  }
  if (!header_seen) {
    throw ParseError("corpus " + path.string() + ": missing header line");
  }
  if (corpus.tasks.empty()) {
    throw ParseError("corpus: empty task list");
  }
  return corpus;
}

void write_config(ByteWriter& writer, const TrainConfig& config) {
  writer.i32(config.num_themes);
  writer.i32(config.embed_dim);
  writer.f64(config.alpha_init);
  writer.f64(config.tau0);
  writer.f64(config.tau1);
  writer.i32(config.batch_size);
  writer.i64(config.episodes);
  writer.f64(config.estep_threshold);
  writer.i32(config.estep_max_iters);
  writer.f64(config.adam_step_size);
  writer.u64(config.seed);
  writer.u32(static_cast<std::uint32_t>(config.encoder_hidden.size()));
  for (int w : config.encoder_hidden) writer.i32(w);
  writer.u8(config.identity_embedding ? 1 : 0);
  writer.f64(config.identity_sigma);
  writer.u8(config.stats_from_train_half ? 1 : 0);
  writer.u8(config.alpha_step_per_task ? 1 : 0);
  writer.f64(config.weights.lda);
  writer.f64(config.weights.reconstruction);
  writer.f64(config.weights.classification);
  writer.f64(config.weights.entropy);
}

TrainConfig read_config(ByteReader& reader) {
  TrainConfig config;
  config.num_themes = reader.i32();
  config.embed_dim = reader.i32();
  config.alpha_init = reader.f64();
  config.tau0 = reader.f64();
  config.tau1 = reader.f64();
  config.batch_size = reader.i32();
  config.episodes = reader.i64();
  config.estep_threshold = reader.f64();
  config.estep_max_iters = reader.i32();
  config.adam_step_size = reader.f64();
  config.seed = reader.u64();
  const std::uint32_t hidden = reader.u32();
  config.encoder_hidden.clear();
  for (std::uint32_t i = 0; i < hidden; ++i) config.encoder_hidden.push_back(reader.i32());
  config.identity_embedding = reader.u8() != 0;
  config.identity_sigma = reader.f64();
  config.stats_from_train_half = reader.u8() != 0;
  config.alpha_step_per_task = reader.u8() != 0;
  config.weights.lda = reader.f64();
  config.weights.reconstruction = reader.f64();
  config.weights.classification = reader.f64();
  config.weights.entropy = reader.f64();
  return config;
}

void write_network(ByteWriter& writer, const DenseNetwork& net) {
  writer.u32(static_cast<std::uint32_t>(net.widths().size()));
  for (int w : net.widths()) writer.i32(w);
  for (size_t l = 0; l < net.layer_count(); ++l) {
    writer.matrix(net.weights()[l]);
    writer.vector(net.biases()[l]);
  }
}

DenseNetwork read_network(ByteReader& reader) {
  const std::uint32_t n_widths = reader.u32();
  std::vector<int> widths;
  for (std::uint32_t i = 0; i < n_widths; ++i) widths.push_back(reader.i32());
  DenseNetwork net(widths);
  for (size_t l = 0; l < net.layer_count(); ++l) {
    net.weights()[l] = reader.matrix(net.weights()[l].rows(), net.weights()[l].cols());
    net.biases()[l] = reader.vector(net.biases()[l].size());
  }
  return net;
}

void write_adam(ByteWriter& writer, const AdamState& state) {
  writer.i64(state.step);
  writer.f64(state.step_size);
  writer.f64(state.beta1);
  writer.f64(state.beta2);
  writer.f64(state.epsilon);
  writer.u32(static_cast<std::uint32_t>(state.m_weights.size()));
  for (size_t l = 0; l < state.m_weights.size(); ++l) {
    writer.matrix(state.m_weights[l]);
    writer.matrix(state.v_weights[l]);
    writer.vector(state.m_biases[l]);
    writer.vector(state.v_biases[l]);
  }
}

AdamState read_adam(ByteReader& reader, const DenseNetwork& net) {
  AdamState state = make_adam(net, 0.0);
  state.step = reader.i64();
  state.step_size = reader.f64();
  state.beta1 = reader.f64();
  state.beta2 = reader.f64();
  state.epsilon = reader.f64();
  const std::uint32_t layers = reader.u32();
  if (layers != net.layer_count()) {
    throw LoadError("checkpoint: Adam state layer count mismatch");
  }
  for (size_t l = 0; l < layers; ++l) {
    state.m_weights[l] = reader.matrix(state.m_weights[l].rows(), state.m_weights[l].cols());
    state.v_weights[l] = reader.matrix(state.v_weights[l].rows(), state.v_weights[l].cols());
    state.m_biases[l] = reader.vector(state.m_biases[l].size());
    state.v_biases[l] = reader.vector(state.v_biases[l].size());
  }
  return state;
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, size_t size) {
  std::uint64_t hash = 1469598103934665603ull;
  for (size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

CorpusFile load_corpus(const std::filesystem::path& path) {
  const std::string data = read_file(path, "corpus");
  if (data.size() >= 4 && std::memcmp(data.data(), kCorpusMagic, 4) == 0) {
    return load_corpus_binary(data, path);
  }
  return load_corpus_jsonl(data, path);
}

void save_corpus(const CorpusFile& corpus, const std::filesystem::path& path) {
  if (corpus.tasks.empty()) {
    throw std::invalid_argument("save_corpus: empty task list");
  }
  ByteWriter writer;
  writer.bytes(kCorpusMagic, 4);
  writer.u32(kFormatVersion);
  writer.u32(static_cast<std::uint32_t>(corpus.data_dim));
  writer.u32(static_cast<std::uint32_t>(corpus.label_alphabet));
  writer.u64(corpus.tasks.size());
  for (const auto& task : corpus.tasks) {
    writer.u64(static_cast<std::uint64_t>(task.size()));
    for (int label : task.labels) writer.i32(label);
    writer.matrix(task.points);
  }
  write_file(path, writer.buffer(), "corpus");
}

void save_corpus_jsonl(const CorpusFile& corpus, const std::filesystem::path& path) {
  std::ostringstream out;
  out << nlohmann::json{{"version", kFormatVersion},
                        {"data_dim", corpus.data_dim},
                        {"label_alphabet", corpus.label_alphabet}}
             .dump()
      << "\n";
  for (const auto& task : corpus.tasks) {
    nlohmann::json points = nlohmann::json::array();
    for (Eigen::Index r = 0; r < task.points.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < task.points.cols(); ++c) {
        row.push_back(task.points(r, c));
      }
      points.push_back(std::move(row));
    }
    out << nlohmann::json{{"labels", task.labels}, {"points", std::move(points)}}.dump()
        << "\n";
  }
  write_file(path, out.str(), "corpus");
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  ByteWriter writer;
  writer.bytes(kCheckpointMagic, 4);
  writer.u32(kFormatVersion);
  write_config(writer, state.config);
  const Eigen::Index K = state.themes.size();
  const Eigen::Index D = state.themes.dim();
  writer.u32(static_cast<std::uint32_t>(K));
  writer.u32(static_cast<std::uint32_t>(D));
  writer.u32(static_cast<std::uint32_t>(state.encoder.input_width()));
  for (Eigen::Index k = 0; k < K; ++k) {
    writer.f64(state.themes.alpha()[k]);
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    writer.vector(state.themes.theme(k).mean());
    writer.matrix(state.themes.theme(k).covariance());
  }
  write_network(writer, state.encoder);
  write_network(writer, state.decoder);
  write_adam(writer, state.encoder_adam);
  write_adam(writer, state.decoder_adam);
  writer.i64(state.step);

  std::string payload = writer.buffer();
  const std::uint64_t checksum =
      fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  payload.append(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  write_file(path, payload, "checkpoint");
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path, "checkpoint");
  if (data.size() < 16 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0) {
    throw LoadError("checkpoint " + path.string() + ": not a checkpoint file");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + data.size() - sizeof stored, sizeof stored);
  const std::uint64_t computed = fnv1a64(
      reinterpret_cast<const unsigned char*>(data.data()), data.size() - sizeof stored);
  if (stored != computed) {
    throw LoadError("checkpoint " + path.string() + ": checksum mismatch");
  }

  const std::string payload = data.substr(0, data.size() - sizeof stored);
  ByteReader reader(payload, "checkpoint " + path.string());
  reader.u32();  // magic
  const std::uint32_t version = reader.u32();
  if (version != kFormatVersion) {
    throw LoadError("checkpoint: unsupported format version " + std::to_string(version));
  }
  TrainConfig config = read_config(reader);
  const Eigen::Index K = static_cast<Eigen::Index>(reader.u32());
  const Eigen::Index D = static_cast<Eigen::Index>(reader.u32());
  const Eigen::Index P = static_cast<Eigen::Index>(reader.u32());
  if (K != config.num_themes || D != config.embed_dim) {
    throw LoadError("checkpoint: header K=" + std::to_string(K) + ", D=" + std::to_string(D) +
                    " incompatible with stored config (K=" +
                    std::to_string(config.num_themes) + ", D=" +
                    std::to_string(config.embed_dim) + ")");
  }
  Eigen::ArrayXd alpha(K);
  for (Eigen::Index k = 0; k < K; ++k) alpha[k] = reader.f64();
  std::vector<TaskTheme> themes;
  themes.reserve(static_cast<size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd mean = reader.vector(D);
    Eigen::MatrixXd covariance = reader.matrix(D, D);
    try {
      themes.emplace_back(std::move(mean), std::move(covariance));
    } catch (const std::exception& err) {
      throw LoadError("checkpoint: theme " + std::to_string(k) + ": " + err.what());
    }
  }
  DenseNetwork encoder = read_network(reader);
  DenseNetwork decoder = read_network(reader);
  if (encoder.input_width() != P || encoder.output_width() != 2 * D ||
      decoder.input_width() != D || decoder.output_width() != P) {
    throw LoadError("checkpoint: network widths incompatible with stored K/D/P header");
  }
  AdamState encoder_adam = read_adam(reader, encoder);
  AdamState decoder_adam = read_adam(reader, decoder);
  const long step = reader.i64();
  if (!reader.exhausted()) {
    throw LoadError("checkpoint: trailing bytes after payload");
  }
  return ModelState{ThemeSet(std::move(themes), DirichletParams(alpha)),
                    std::move(encoder),
                    std::move(decoder),
                    std::move(encoder_adam),
                    std::move(decoder_adam),
                    step,
                    std::move(config)};
}

void require_compatible(const ModelState& state, const CorpusFile& corpus) {
  if (corpus.data_dim != state.encoder.input_width()) {
    throw LoadError("corpus data dimension " + std::to_string(corpus.data_dim) +
                    " incompatible with checkpoint data dimension " +
                    std::to_string(state.encoder.input_width()));
  }
}

std::string format_double(double value) {
  char buffer[64];
  const auto result =
      std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::general, 17);
  return std::string(buffer, result.ptr);
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& matrix) {
  std::ostringstream out;
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_double(matrix(r, c));
    }
    out << '\n';
  }
  write_file(path, out.str(), "csv");
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("config: cannot open " + path.string());
  }
  TrainConfig config;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw ParseError("config: line " + std::to_string(line_number) + " is not key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r");
      const size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "num_themes") config.num_themes = std::stoi(value);
      else if (key == "embed_dim") config.embed_dim = std::stoi(value);
      else if (key == "alpha_init") config.alpha_init = std::stod(value);
      else if (key == "tau0") config.tau0 = std::stod(value);
      else if (key == "tau1") config.tau1 = std::stod(value);
      else if (key == "batch_size") config.batch_size = std::stoi(value);
      else if (key == "episodes") config.episodes = std::stol(value);
      else if (key == "estep_threshold") config.estep_threshold = std::stod(value);
      else if (key == "estep_max_iters") config.estep_max_iters = std::stoi(value);
      else if (key == "adam_step_size") config.adam_step_size = std::stod(value);
      else if (key == "seed") config.seed = std::stoull(value);
      else if (key == "identity_embedding") config.identity_embedding = value == "1" || value == "true";
      else if (key == "identity_sigma") config.identity_sigma = std::stod(value);
      else if (key == "stats_from_train_half") config.stats_from_train_half = value == "1" || value == "true";
      else if (key == "alpha_step_per_task") config.alpha_step_per_task = value == "1" || value == "true";
      else if (key == "weight_lda") config.weights.lda = std::stod(value);
      else if (key == "weight_reconstruction") config.weights.reconstruction = std::stod(value);
      else if (key == "weight_classification") config.weights.classification = std::stod(value);
      else if (key == "weight_entropy") config.weights.entropy = std::stod(value);
      else if (key == "encoder_hidden") {
        config.encoder_hidden.clear();
        std::istringstream widths(value);
        std::string token;
        while (std::getline(widths, token, ',')) {
          if (!token.empty()) config.encoder_hidden.push_back(std::stoi(token));
        }
      } else {
        throw ParseError("config: unknown key '" + key + "' at line " +
                         std::to_string(line_number));
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("config: bad value for '" + key + "' at line " +
                       std::to_string(line_number));
    } catch (const std::out_of_range&) {
      throw ParseError("config: value out of range for '" + key + "' at line " +
                       std::to_string(line_number));
    }
  }
  return config;
}

}  // namespace ttm
