#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttm/trainer.hpp"

namespace ttm {

/// A collection of tasks sharing one data dimension and label alphabet.
struct CorpusFile {
  std::uint32_t version = 1;
  int data_dim = 0;        // P
  int label_alphabet = 0;  // labels lie in [0, label_alphabet)
  std::vector<TaskDataset> tasks;
};

/// Reads either the binary container (magic "TTMC") or the line-delimited
/// JSON alternative, validating every invariant. Parse errors name the
/// offending task index.
CorpusFile load_corpus(const std::filesystem::path& path);
void save_corpus(const CorpusFile& corpus, const std::filesystem::path& path);
void save_corpus_jsonl(const CorpusFile& corpus, const std::filesystem::path& path);

/// Checkpoint round-trips are bitwise for all parameters; factors and
/// log-determinants are recomputed and revalidated on load.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

/// Explicit shape compatibility check between a loaded model and a corpus.
void require_compatible(const ModelState& state, const CorpusFile& corpus);

/// FNV-1a 64-bit hash, the checkpoint content checksum.
std::uint64_t fnv1a64(const unsigned char* data, size_t size);

/// Locale-independent decimal text with 17 significant digits.
std::string format_double(double value);

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& matrix);

/// Flat key = value configuration file mirroring TrainConfig fields.
TrainConfig load_train_config(const std::filesystem::path& path);

/// Command line entry point; returns the process exit status.
int run_cli(int argc, char** argv);

}  // namespace ttm
