#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainfed/tensor.hpp"

namespace brainfed {

/// Generator parameters for the synthetic multi-subject corpus: every sample
/// is a subject-specific linear mixing of a shared latent, with targets from
/// shared nonlinear maps of that latent. Train latents are disjoint per
/// subject; test latents are shared by all subjects.
struct SyntheticSpec {
    std::size_t num_subjects = 4;
    std::size_t latent_dim = 8;
    std::vector<std::size_t> voxel_dims = {48, 56, 64, 72};  // one per subject, distinct
    std::size_t train_per_subject = 512;
    std::size_t shared_test_count = 128;
    double noise_sigma = 0.05;
    // Subject-level latent jitter: inputs observe z + latent_sigma * eps
    // while targets stay functions of the clean z, so every observation
    // carries bounded information about the shared structure.
    double latent_sigma = 1.0;
    std::size_t image_dim = 32;  // v * c
    std::size_t text_dim = 24;   // t * c
    std::uint64_t target_map_seed = 101;
    std::uint64_t data_seed = 1;

    void validate() const;
};

struct SubjectData {
    std::uint16_t subject_id = 0;
    Tensor x_train;    // [N x d_s]
    Tensor img_train;  // [N x image_dim]
    Tensor txt_train;  // [N x text_dim]
    Tensor x_test;     // [N_test x d_s], same underlying latents for all subjects
};

struct Corpus {
    SyntheticSpec spec;
    std::vector<SubjectData> subjects;
    Tensor img_test;  // [N_test x image_dim], shared across subjects
    Tensor txt_test;  // [N_test x text_dim]
    std::vector<double> canaries;  // 16 sentinel values planted in the inputs

    // Generator-internal blocks kept for verification; not serialized.
    std::vector<Tensor> train_latents;  // per subject [N x q]
    Tensor test_latents;                // [N_test x q]
};

/// Number of canary doubles planted into training inputs.
constexpr std::size_t kCanaryCount = 16;

/// Position of canary i: subject (i mod S), flat element (i div S) of x_train.
struct CanarySlot {
    std::size_t subject_index;
    std::size_t flat_index;
};
CanarySlot canary_slot(std::size_t i, std::size_t num_subjects);

Corpus generate(const SyntheticSpec& spec);

/// Extract the planted canary values from a corpus by the fixed position rule.
std::vector<double> extract_canaries(const Corpus& corpus);

// Dataset file layout (little-endian):
//   magic "BGDS", version u16, subject count u16;
//   per subject: id u16, d u32, N_train u32;
//   shared test header: N_test u32, image dim u32, text dim u32;
//   tensors as f64: per subject x_train, img_train, txt_train, x_test;
//   then the shared img_test and txt_test blocks.
constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus);
Corpus decode_corpus(const std::vector<std::uint8_t>& bytes);

void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

/// Byte size the header fields imply; the file must match exactly.
std::size_t predicted_file_size(const Corpus& corpus);

}  // namespace brainfed
