#include "brainfed/synthdata.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "brainfed/network.hpp"  // smooth_act

namespace brainfed {

namespace {

// Two-layer smooth random map of the latent, fixed by its rng stream. The
// pre-activation gain pushes the hidden units into the curved region of the
// activation so the map is genuinely nonlinear in the latent.
struct TargetMap {
    Tensor w1, b1, w2, b2;

    static TargetMap make(Rng rng, std::size_t latent_dim, std::size_t out_dim) {
        const std::size_t hidden = 1024;
        const double gain = 8.0;
        TargetMap map;
        map.w1 = gaussian(rng, {hidden, latent_dim});
        for (double& v : map.w1.data) v *= gain / std::sqrt(static_cast<double>(latent_dim));
        map.b1 = gaussian(rng, {hidden});
        for (double& v : map.b1.data) v *= 0.5;
        map.w2 = gaussian(rng, {out_dim, hidden});
        for (double& v : map.w2.data) v /= std::sqrt(static_cast<double>(hidden));
        map.b2 = gaussian(rng, {out_dim});
        for (double& v : map.b2.data) v *= 0.1;
        return map;
    }

    // [N x q] -> [N x out]
    Tensor apply(const Tensor& latents) const {
        Tensor h = matmul(latents, transpose(w1));
        const std::size_t n = h.rows(), hd = h.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hd; ++j)
                h.data[i * hd + j] = smooth_act(h.data[i * hd + j] + b1.data[j]);
        Tensor out = matmul(h, transpose(w2));
        const std::size_t od = out.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < od; ++j) out.data[i * od + j] += b2.data[j];
        return out;
    }
};

struct SubjectMixing {
    Tensor a;  // [d x q]
    Tensor b;  // [d]

    static SubjectMixing make(Rng rng, std::size_t voxel_dim, std::size_t latent_dim) {
        SubjectMixing mix;
        mix.a = gaussian(rng, {voxel_dim, latent_dim});
        for (double& v : mix.a.data) v /= std::sqrt(static_cast<double>(latent_dim));
        mix.b = gaussian(rng, {voxel_dim});
        for (double& v : mix.b.data) v *= 0.1;
        return mix;
    }

    // x = A z + b + sigma * noise
    Tensor apply(const Tensor& latents, double sigma, Rng& noise_rng) const {
        Tensor x = matmul(latents, transpose(a));
        const std::size_t n = x.rows(), d = x.cols();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = x.data[i * d + j] + b.data[j];
                if (sigma > 0.0) v += sigma * noise_rng.next_gaussian();
                x.data[i * d + j] = v;
            }
        }
        return x;
    }
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64_block(std::vector<std::uint8_t>& out, const Tensor& t) {
    const std::size_t bytes = t.data.size() * sizeof(double);
    const std::size_t offset = out.size();
    out.resize(offset + bytes);
    std::memcpy(out.data() + offset, t.data.data(), bytes);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw format_error("dataset: truncated at byte " + std::to_string(pos));
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos]) |
                          static_cast<std::uint16_t>(buf[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    Tensor block(std::size_t rows, std::size_t cols) {
        const std::size_t n = rows * cols;
        need(n * sizeof(double));
        std::vector<double> data(n);
        std::memcpy(data.data(), buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return Tensor({rows, cols}, std::move(data));
    }
};

}  // namespace

void SyntheticSpec::validate() const {
    if (num_subjects < 1 || latent_dim < 1 || train_per_subject < 1 || shared_test_count < 1 ||
        image_dim < 1 || text_dim < 1) {
        throw contract_error("synthetic spec: all counts must be >= 1");
    }
    if (voxel_dims.size() != num_subjects) {
        throw contract_error("synthetic spec: need one voxel dim per subject");
    }
    std::set<std::size_t> distinct(voxel_dims.begin(), voxel_dims.end());
    if (distinct.size() != voxel_dims.size()) {
        throw contract_error("synthetic spec: voxel dims must be distinct");
    }
    for (std::size_t d : voxel_dims) {
        if (d < latent_dim) {
            throw contract_error("synthetic spec: voxel dim " + std::to_string(d) +
                                 " is below latent dim " + std::to_string(latent_dim));
        }
    }
    if (noise_sigma < 0.0) throw contract_error("synthetic spec: noise sigma must be >= 0");
}

CanarySlot canary_slot(std::size_t i, std::size_t num_subjects) {
    return {i % num_subjects, i / num_subjects};
}

Corpus generate(const SyntheticSpec& spec) {
    spec.validate();

    Corpus corpus;
    corpus.spec = spec;

    const Rng data_root(spec.data_seed);
    const Rng map_root(spec.target_map_seed);
    const TargetMap g_img = TargetMap::make(map_root.fork("image_map"), spec.latent_dim, spec.image_dim);
    const TargetMap g_txt = TargetMap::make(map_root.fork("text_map"), spec.latent_dim, spec.text_dim);

    // Shared test latents, one block for every subject.
    Rng test_latent_rng = data_root.fork("test_latents");
    corpus.test_latents = gaussian(test_latent_rng, {spec.shared_test_count, spec.latent_dim});
    corpus.img_test = g_img.apply(corpus.test_latents);
    corpus.txt_test = g_txt.apply(corpus.test_latents);

    for (std::size_t s = 0; s < spec.num_subjects; ++s) {
        SubjectData subject;
        subject.subject_id = static_cast<std::uint16_t>(s);
        const SubjectMixing mix =
            SubjectMixing::make(data_root.fork("mixing").fork(s), spec.voxel_dims[s], spec.latent_dim);

        Rng latent_rng = data_root.fork("train_latents").fork(s);
        Tensor latents = gaussian(latent_rng, {spec.train_per_subject, spec.latent_dim});
        Rng noise_rng = data_root.fork("noise").fork(s);

        // Inputs observe a subject-jittered latent; targets use the clean one.
        // Test trials mirror repetition-averaged acquisition: three repeats
        // per stimulus cut both noise sources by sqrt(3).
        const double test_scale = 1.0 / std::sqrt(3.0);
        auto jitter = [&](const Tensor& z, double sigma_scale) {
            Tensor out = z;
            const double s_lat = spec.latent_sigma * sigma_scale;
            if (s_lat > 0.0) {
                for (double& v : out.data) v += s_lat * noise_rng.next_gaussian();
            }
            return out;
        };
        subject.x_train = mix.apply(jitter(latents, 1.0), spec.noise_sigma, noise_rng);
        subject.img_train = g_img.apply(latents);
        subject.txt_train = g_txt.apply(latents);
        subject.x_test = mix.apply(jitter(corpus.test_latents, test_scale),
                                   spec.noise_sigma * test_scale, noise_rng);
        corpus.train_latents.push_back(std::move(latents));
        corpus.subjects.push_back(std::move(subject));
    }

    // Plant the canary sentinels into training inputs at fixed positions.
    // Values stay in the normal input range so training is unaffected, but
    // their full random mantissas make accidental 8-byte collisions in the
    // message log vanishingly unlikely.
    Rng canary_rng = data_root.fork("canaries");
    corpus.canaries.resize(kCanaryCount);
    for (std::size_t i = 0; i < kCanaryCount; ++i) {
        corpus.canaries[i] = canary_rng.next_unit() * 6.0 - 3.0;
        const CanarySlot slot = canary_slot(i, spec.num_subjects);
        Tensor& x = corpus.subjects[slot.subject_index].x_train;
        if (slot.flat_index < x.numel()) {
            x.data[slot.flat_index] = corpus.canaries[i];
        }
    }
    return corpus;
}

std::vector<double> extract_canaries(const Corpus& corpus) {
    std::vector<double> out;
    out.reserve(kCanaryCount);
    for (std::size_t i = 0; i < kCanaryCount; ++i) {
        const CanarySlot slot = canary_slot(i, corpus.subjects.size());
        const Tensor& x = corpus.subjects[slot.subject_index].x_train;
        if (slot.flat_index < x.numel()) out.push_back(x.data[slot.flat_index]);
    }
    return out;
}

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus) {
    std::vector<std::uint8_t> out;
    out.push_back('B');
    out.push_back('G');
    out.push_back('D');
    out.push_back('S');
    put_u16(out, kDatasetVersion);
    put_u16(out, static_cast<std::uint16_t>(corpus.subjects.size()));
    for (const SubjectData& s : corpus.subjects) {
        put_u16(out, s.subject_id);
        put_u32(out, static_cast<std::uint32_t>(s.x_train.cols()));
        put_u32(out, static_cast<std::uint32_t>(s.x_train.rows()));
    }
    put_u32(out, static_cast<std::uint32_t>(corpus.img_test.rows()));
    put_u32(out, static_cast<std::uint32_t>(corpus.img_test.cols()));
    put_u32(out, static_cast<std::uint32_t>(corpus.txt_test.cols()));
    for (const SubjectData& s : corpus.subjects) {
        put_f64_block(out, s.x_train);
        put_f64_block(out, s.img_train);
        put_f64_block(out, s.txt_train);
        put_f64_block(out, s.x_test);
    }
    put_f64_block(out, corpus.img_test);
    put_f64_block(out, corpus.txt_test);
    return out;
}

Corpus decode_corpus(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "BGDS", 4) != 0) throw format_error("dataset: bad magic");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion) {
        throw format_error("dataset: unsupported version " + std::to_string(version));
    }
    const std::uint16_t subject_count = r.u16();

    Corpus corpus;
    std::vector<std::pair<std::size_t, std::size_t>> dims;  // (d, N_train)
    for (std::uint16_t s = 0; s < subject_count; ++s) {
        SubjectData subject;
        subject.subject_id = r.u16();
        const std::size_t d = r.u32();
        const std::size_t n = r.u32();
        dims.emplace_back(d, n);
        corpus.subjects.push_back(std::move(subject));
    }
    const std::size_t n_test = r.u32();
    const std::size_t img_dim = r.u32();
    const std::size_t txt_dim = r.u32();

    for (std::uint16_t s = 0; s < subject_count; ++s) {
        SubjectData& subject = corpus.subjects[s];
        const auto [d, n] = dims[s];
        subject.x_train = r.block(n, d);
        subject.img_train = r.block(n, img_dim);
        subject.txt_train = r.block(n, txt_dim);
        subject.x_test = r.block(n_test, d);
    }
    corpus.img_test = r.block(n_test, img_dim);
    corpus.txt_test = r.block(n_test, txt_dim);
    if (r.pos != bytes.size()) throw format_error("dataset: trailing bytes");

    corpus.spec.num_subjects = subject_count;
    corpus.spec.image_dim = img_dim;
    corpus.spec.text_dim = txt_dim;
    corpus.spec.shared_test_count = n_test;
    corpus.spec.voxel_dims.clear();
    for (const auto& [d, n] : dims) {
        corpus.spec.voxel_dims.push_back(d);
        corpus.spec.train_per_subject = n;
    }
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    const auto bytes = encode_corpus(corpus);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("dataset: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw format_error("dataset: write failed for '" + path + "'");
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("dataset: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_corpus(bytes);
}

std::size_t predicted_file_size(const Corpus& corpus) {
    std::size_t size = 4 + 2 + 2;              // magic, version, subject count
    size += corpus.subjects.size() * (2 + 4 + 4);  // per-subject header
    size += 4 + 4 + 4;                         // shared test header
    for (const SubjectData& s : corpus.subjects) {
        size += (s.x_train.numel() + s.img_train.numel() + s.txt_train.numel() + s.x_test.numel()) *
                sizeof(double);
    }
    size += (corpus.img_test.numel() + corpus.txt_test.numel()) * sizeof(double);
    return size;
}

}  // namespace brainfed
