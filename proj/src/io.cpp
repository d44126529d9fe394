#include "ssp/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ssp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'T', 'E', 'N'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    std::uint8_t b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("truncated tensor header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, mode);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode) {
    std::ifstream in(path, mode);
    if (!in) throw DataError("cannot read " + path.string());
    return in;
}

} // namespace

std::size_t dtype_width(Dtype d) {
    switch (d) {
        case Dtype::f32: return 4;
        case Dtype::u8: return 1;
        case Dtype::i32: return 4;
    }
    throw DataError("unknown tensor dtype");
}

std::size_t TensorRecord::element_count() const {
    if (extents.empty()) return 0;
    std::size_t n = 1;
    for (const auto e : extents) n *= e;
    return n;
}

void record_write(std::ostream& out, const TensorRecord& rec) {
    if (rec.extents.size() > 255) throw DataError("tensor rank too large");
    if (rec.payload.size() != rec.element_count() * dtype_width(rec.dtype))
        throw DataError("tensor payload length mismatch");
    out.write(kMagic, 4);
    const std::uint8_t head[4] = {kVersion, static_cast<std::uint8_t>(rec.dtype),
                                  static_cast<std::uint8_t>(rec.extents.size()), 0};
    out.write(reinterpret_cast<const char*>(head), 4);
    for (const auto e : rec.extents) put_u64(out, e);
    out.write(reinterpret_cast<const char*>(rec.payload.data()),
              static_cast<std::streamsize>(rec.payload.size()));
    if (!out) throw DataError("tensor write failed");
}

TensorRecord record_read(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad tensor file magic");
    std::uint8_t head[4];
    in.read(reinterpret_cast<char*>(head), 4);
    if (!in) throw DataError("truncated tensor header");
    if (head[0] != kVersion) throw DataError("unsupported tensor file version");
    if (head[1] > 2) throw DataError("unknown tensor dtype");
    TensorRecord rec;
    rec.dtype = static_cast<Dtype>(head[1]);
    rec.extents.resize(head[2]);
    for (auto& e : rec.extents) e = get_u64(in);
    const std::size_t bytes = rec.element_count() * dtype_width(rec.dtype);
    rec.payload.resize(bytes);
    in.read(reinterpret_cast<char*>(rec.payload.data()),
            static_cast<std::streamsize>(bytes));
    if (!in && bytes > 0) throw DataError("truncated tensor payload");
    return rec;
}

void tensor_write(std::ostream& out, const Tensor& t) {
    TensorRecord rec;
    rec.dtype = Dtype::f32;
    rec.extents = t.dims();
    rec.payload.resize(t.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(rec.payload.data(), t.data(), rec.payload.size());
    record_write(out, rec);
}

void tensor_write(const fs::path& path, const Tensor& t) {
    auto out = open_out(path, std::ios::binary);
    tensor_write(out, t);
}

Tensor tensor_read(std::istream& in, Tag tag) {
    const TensorRecord rec = record_read(in);
    if (rec.dtype != Dtype::f32)
        throw DataError("expected a 32-bit float tensor");
    Tensor t(rec.extents, tag);
    std::memcpy(t.data(), rec.payload.data(), rec.payload.size());
    return t;
}

Tensor tensor_read(const fs::path& path, Tag tag) {
    auto in = open_in(path, std::ios::binary);
    Tensor t = tensor_read(in, tag);
    in.peek();
    if (!in.eof()) throw DataError("trailing bytes in " + path.string());
    return t;
}

void labelmap_write(const fs::path& path, const LabelMap& l) {
    TensorRecord rec;
    rec.dtype = Dtype::i32;
    rec.extents = {l.height, l.width};
    rec.payload.resize(l.data.size() * 4);
    std::memcpy(rec.payload.data(), l.data.data(), rec.payload.size());
    auto out = open_out(path, std::ios::binary);
    record_write(out, rec);
}

LabelMap labelmap_read(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    const TensorRecord rec = record_read(in);
    if (rec.dtype != Dtype::i32 || rec.extents.size() != 2)
        throw DataError("expected a rank-2 i32 tensor in " + path.string());
    LabelMap l(rec.extents[0], rec.extents[1]);
    std::memcpy(l.data.data(), rec.payload.data(), rec.payload.size());
    return l;
}

// ---------------------------------------------------------------------------
// PNM
// ---------------------------------------------------------------------------

namespace {

void pnm_skip_space(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

std::size_t pnm_int(std::istream& in) {
    pnm_skip_space(in);
    std::size_t v = 0;
    if (!(in >> v)) throw DataError("malformed PNM header");
    return v;
}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

} // namespace

void ppm_write(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.channels() != 3)
        throw ContractError("ppm_write expects a 3 x H x W image");
    auto out = open_out(path, std::ios::binary);
    out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
    std::vector<std::uint8_t> row(image.width() * 3);
    for (std::size_t y = 0; y < image.height(); ++y) {
        for (std::size_t x = 0; x < image.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                row[x * 3 + c] = to_byte(image.at(c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("ppm write failed");
}

Tensor ppm_read(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw DataError("not a P6 pixmap: " + path.string());
    const std::size_t w = pnm_int(in);
    const std::size_t h = pnm_int(in);
    const std::size_t maxval = pnm_int(in);
    if (maxval != 255) throw DataError("ppm maxval must be 255");
    in.get(); // single whitespace after the header
    Tensor image = Tensor::chw(3, h, w, Tag::image);
    std::vector<std::uint8_t> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
        if (!in) throw DataError("truncated ppm payload");
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                image.at(c, y, x) = static_cast<float>(row[x * 3 + c]) / 255.0f;
    }
    return image;
}

void pgm_write(const fs::path& path, const LabelMap& labels) {
    auto out = open_out(path, std::ios::binary);
    out << "P5\n" << labels.width << " " << labels.height << "\n255\n";
    std::vector<std::uint8_t> row(labels.width);
    for (std::size_t y = 0; y < labels.height; ++y) {
        for (std::size_t x = 0; x < labels.width; ++x) {
            const std::int32_t v = labels.at(y, x);
            if (v < 0 || v > 255)
                throw ContractError("label does not fit an 8-bit graymap");
            row[x] = static_cast<std::uint8_t>(v);
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("pgm write failed");
}

LabelMap pgm_read(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw DataError("not a P5 graymap: " + path.string());
    const std::size_t w = pnm_int(in);
    const std::size_t h = pnm_int(in);
    const std::size_t maxval = pnm_int(in);
    if (maxval != 255) throw DataError("pgm maxval must be 255");
    in.get();
    LabelMap labels(h, w);
    std::vector<std::uint8_t> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
        if (!in) throw DataError("truncated pgm payload");
        for (std::size_t x = 0; x < w; ++x)
            labels.at(y, x) = row[x];
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

SequenceManifest manifest_load(const fs::path& dir) {
    const fs::path file = dir / "manifest.json";
    auto in = open_in(file, std::ios::in);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + file.string() + ": " + e.what());
    }

    SequenceManifest m;
    m.root = dir;
    m.name = dir.filename().string();
    try {
        m.frames = doc.at("frames").get<std::vector<std::string>>();
        for (const auto& [key, value] : doc.at("labels").items()) {
            const std::size_t idx = std::stoul(key);
            m.labels[idx] = value.get<std::string>();
        }
        m.classes = doc.at("classes").get<std::vector<std::string>>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("annotated"))
            m.annotated = doc.at("annotated").get<std::vector<std::size_t>>();
        if (doc.contains("homographies"))
            for (const auto& row : doc.at("homographies")) {
                const auto v = row.get<std::vector<double>>();
                if (v.size() != 9)
                    throw DataError("homography rows must hold 9 floats");
                m.homographies.push_back(
                    Homography::from_rowmajor(std::span<const double, 9>(v.data(), 9)));
            }
        if (doc.contains("flows_fwd"))
            m.flows_fwd = doc.at("flows_fwd").get<std::vector<std::string>>();
        if (doc.contains("flows_bwd"))
            m.flows_bwd = doc.at("flows_bwd").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + file.string() + ": " + e.what());
    }

    // Consistency checks run before any computation starts.
    if (m.frames.empty()) throw DataError("manifest lists no frames");
    const std::size_t pairs = m.frames.size() - 1;
    if (!m.homographies.empty() && m.homographies.size() != pairs)
        throw DataError("manifest homography count must equal frames - 1");
    if (!m.flows_fwd.empty() && m.flows_fwd.size() != pairs)
        throw DataError("manifest flows_fwd count must equal frames - 1");
    if (!m.flows_bwd.empty() && m.flows_bwd.size() != pairs)
        throw DataError("manifest flows_bwd count must equal frames - 1");
    for (const auto& [idx, file_] : m.labels)
        if (idx >= m.frames.size())
            throw DataError("label index " + std::to_string(idx) +
                            " out of range");
    if (m.annotated.empty())
        for (const auto& [idx, file_] : m.labels) m.annotated.push_back(idx);
    for (const auto idx : m.annotated)
        if (!m.labels.count(idx))
            throw DataError("annotated frame " + std::to_string(idx) +
                            " has no label file");
    auto check_exists = [&dir](const std::string& rel) {
        if (!fs::exists(dir / rel))
            throw DataError("manifest references missing file " + rel);
    };
    for (const auto& f : m.frames) check_exists(f);
    for (const auto& [idx, f] : m.labels) check_exists(f);
    for (const auto& f : m.flows_fwd) check_exists(f);
    for (const auto& f : m.flows_bwd) check_exists(f);
    return m;
}

void manifest_save(const SequenceManifest& m) {
    json doc;
    doc["frames"] = m.frames;
    json labels = json::object();
    for (const auto& [idx, file] : m.labels) labels[std::to_string(idx)] = file;
    doc["labels"] = labels;
    doc["classes"] = m.classes;
    doc["seed"] = m.seed;
    if (!m.annotated.empty()) doc["annotated"] = m.annotated;
    if (!m.homographies.empty()) {
        json rows = json::array();
        for (const auto& H : m.homographies)
            rows.push_back(std::vector<double>(H.h.begin(), H.h.end()));
        doc["homographies"] = rows;
    }
    if (!m.flows_fwd.empty()) doc["flows_fwd"] = m.flows_fwd;
    if (!m.flows_bwd.empty()) doc["flows_bwd"] = m.flows_bwd;

    auto out = open_out(m.root / "manifest.json", std::ios::out);
    out << doc.dump(2) << "\n";
}

std::vector<fs::path> discover_sequences(const fs::path& data_dir) {
    if (!fs::exists(data_dir))
        throw DataError("data directory does not exist: " + data_dir.string());
    if (fs::exists(data_dir / "manifest.json")) return {data_dir};
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
            dirs.push_back(entry.path());
    if (dirs.empty())
        throw DataError("no sequence manifests under " + data_dir.string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

LoadedSequence sequence_load(const fs::path& dir) {
    LoadedSequence seq;
    seq.manifest = manifest_load(dir);
    for (const auto& rel : seq.manifest.frames)
        seq.frames.push_back(ppm_read(dir / rel));
    for (const auto& [idx, rel] : seq.manifest.labels)
        seq.labels[idx] = pgm_read(dir / rel);
    for (const auto& rel : seq.manifest.flows_fwd)
        seq.flows_fwd.emplace_back(tensor_read(dir / rel, Tag::flow));
    for (const auto& rel : seq.manifest.flows_bwd)
        seq.flows_bwd.emplace_back(tensor_read(dir / rel, Tag::flow));
    for (const auto& f : seq.flows_fwd) f.validate();
    for (const auto& f : seq.flows_bwd) f.validate();
    return seq;
}

namespace {

std::string index_name(const char* prefix, std::size_t idx, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, idx, ext);
    return buf;
}

} // namespace

void sequence_save(const SyntheticSequence& seq, const fs::path& dir) {
    fs::create_directories(dir);
    SequenceManifest m;
    m.root = dir;
    m.name = dir.filename().string();
    m.seed = seq.config.seed;
    m.annotated = seq.annotated;
    for (std::size_t c = 0; c < seq.config.classes; ++c)
        m.classes.push_back("class" + std::to_string(c));

    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        const std::string rel = "frames/" + index_name("frame", k, "ppm");
        ppm_write(dir / rel, seq.frames[k]);
        m.frames.push_back(rel);
        const std::string lrel = "labels/" + index_name("label", k, "pgm");
        pgm_write(dir / lrel, seq.labels[k]);
        m.labels[k] = lrel;
    }
    m.homographies = seq.homographies;
    for (std::size_t i = 0; i < seq.flows_fwd.size(); ++i) {
        const std::string frel = "flows/" + index_name("fwd", i, "sten");
        tensor_write(dir / frel, seq.flows_fwd[i].uv);
        m.flows_fwd.push_back(frel);
        const std::string brel = "flows/" + index_name("bwd", i, "sten");
        tensor_write(dir / brel, seq.flows_bwd[i].uv);
        m.flows_bwd.push_back(brel);
    }
    manifest_save(m);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'S', 'S', 'P', 'C'};

Tensor rank1(const std::vector<float>& v) {
    Tensor t({v.size()}, Tag::feature);
    std::copy(v.begin(), v.end(), t.values().begin());
    return t;
}

} // namespace

void checkpoint_save(const fs::path& path, const Checkpoint& ckpt) {
    if (ckpt.mode != "base" && ckpt.mode != "kd")
        throw ContractError("checkpoint mode must be base or kd");
    auto out = open_out(path, std::ios::binary);
    out.write(kCkptMagic, 4);
    const std::uint8_t flags[4] = {
        kVersion, static_cast<std::uint8_t>(ckpt.mode == "kd" ? 1 : 0),
        static_cast<std::uint8_t>(
            ckpt.layer.mode == SimilarityMode::cosine ? 1 : 0),
        static_cast<std::uint8_t>(ckpt.one_step ? 1 : 0)};
    out.write(reinterpret_cast<const char*>(flags), 4);
    put_u64(out, ckpt.seed);
    put_u64(out, ckpt.epoch);
    const std::uint64_t feature_channels =
        ckpt.layer.mode == SimilarityMode::cosine
            ? ckpt.head.in_features
            : ckpt.layer.stack.front().in_channels / 2;
    put_u64(out, feature_channels);
    put_u64(out, ckpt.head.classes);
    put_u64(out, ckpt.head.in_features);
    tensor_write(out, rank1(ckpt.layer.export_params()));
    std::vector<float> head_blob = ckpt.head.export_params();
    head_blob.insert(head_blob.end(), ckpt.head.mu.begin(), ckpt.head.mu.end());
    head_blob.insert(head_blob.end(), ckpt.head.sigma.begin(),
                     ckpt.head.sigma.end());
    tensor_write(out, rank1(head_blob));
}

Checkpoint checkpoint_load(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw DataError("bad checkpoint magic in " + path.string());
    std::uint8_t flags[4];
    in.read(reinterpret_cast<char*>(flags), 4);
    if (!in || flags[0] != kVersion)
        throw DataError("unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.mode = flags[1] ? "kd" : "base";
    ckpt.one_step = flags[3] != 0;
    ckpt.seed = get_u64(in);
    ckpt.epoch = get_u64(in);
    const std::uint64_t feature_channels = get_u64(in);
    const std::uint64_t classes = get_u64(in);
    const std::uint64_t in_features = get_u64(in);

    const Tensor layer_blob = tensor_read(in, Tag::feature);
    if (flags[2]) {
        ckpt.layer = SimilarityLayer::cosine();
        if (layer_blob.size() != 0)
            throw DataError("cosine checkpoint carries stray parameters");
    } else {
        Rng dummy(0);
        ckpt.layer = SimilarityLayer::learned(feature_channels, dummy);
        if (layer_blob.size() != ckpt.layer.param_count())
            throw DataError("checkpoint similarity blob size mismatch");
        ckpt.layer.import_params(layer_blob.values());
    }

    const Tensor head_blob = tensor_read(in, Tag::feature);
    ckpt.head.in_features = in_features;
    ckpt.head.classes = classes;
    const std::size_t wb = classes * in_features + classes;
    if (head_blob.size() != wb + 2 * in_features)
        throw DataError("checkpoint head blob size mismatch");
    ckpt.head.weight.assign(head_blob.data(), head_blob.data() + classes * in_features);
    ckpt.head.bias.assign(head_blob.data() + classes * in_features,
                          head_blob.data() + wb);
    ckpt.head.mu.assign(head_blob.data() + wb, head_blob.data() + wb + in_features);
    ckpt.head.sigma.assign(head_blob.data() + wb + in_features,
                           head_blob.data() + wb + 2 * in_features);
    ckpt.head.validate();
    return ckpt;
}

} // namespace ssp
