#include "stylecl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "stylecl/rng.hpp"

namespace fs = std::filesystem;

namespace stylecl {

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

const std::vector<uint8_t>& ClassSchedule::set_at(int t) const {
    if (t < 0 || t >= steps()) throw ConfigError("schedule: step out of range");
    return sets[static_cast<size_t>(t)];
}

std::vector<uint8_t> ClassSchedule::classes_up_to(int t) const {
    std::vector<uint8_t> out;
    for (int k = 0; k <= t && k < steps(); ++k)
        out.insert(out.end(), sets[k].begin(), sets[k].end());
    return out;
}

uint64_t ClassSchedule::hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (const auto& set : sets) {
        feed(0xFE);  // set boundary
        for (uint8_t id : set) feed(id);
    }
    return h;
}

void ClassSchedule::validate() const {
    if (sets.empty()) throw ConfigError("schedule: no class sets");
    std::set<uint8_t> seen;
    for (const auto& set : sets) {
        if (set.empty()) throw ConfigError("schedule: empty class set");
        for (uint8_t id : set) {
            if (id == kUnknownId || id == kIgnoreId)
                throw ConfigError("schedule: ids 0 and 255 are reserved");
            if (!seen.insert(id).second)
                throw ConfigError("schedule: class id " + std::to_string(id) +
                                  " appears in more than one set");
            if (!class_names.count(id))
                throw ConfigError("schedule: class id " + std::to_string(id) + " has no name");
        }
    }
}

ClassSchedule default_schedule() {
    ClassSchedule s;
    s.sets = {{1, 2}, {3, 4}, {5, 6}};
    s.class_names = {{1, "sky"},  {2, "road"}, {3, "building"},
                     {4, "pole"}, {5, "car"},  {6, "person"}};
    return s;
}

// ---------------------------------------------------------------------------
// domains
// ---------------------------------------------------------------------------

namespace {

// One shared scene palette; domains differ by a global channel gain and bias
// (lighting and tint), plus their texture statistics. Class colors keep the
// same relative ordering in every domain, the way scene content keeps its
// meaning under lighting changes.
DomainSpec make_domain(const std::string& name, std::array<float, 3> gain,
                       std::array<float, 3> bias, float texture_amp, int texture_scale,
                       int layout_seed_offset) {
    static const std::map<uint8_t, std::array<float, 3>> base = {
        {1, {0.50f, 0.72f, 0.97f}},  // sky
        {2, {0.45f, 0.44f, 0.46f}},  // road
        {3, {0.76f, 0.55f, 0.34f}},  // building
        {4, {0.14f, 0.18f, 0.15f}},  // pole
        {5, {0.90f, 0.20f, 0.16f}},  // car
        {6, {0.94f, 0.85f, 0.40f}},  // person
    };
    DomainSpec d;
    d.name = name;
    for (const auto& [id, rgb] : base) {
        std::array<float, 3> c;
        for (int ch = 0; ch < 3; ++ch) {
            float v = rgb[static_cast<size_t>(ch)] * gain[static_cast<size_t>(ch)] +
                      bias[static_cast<size_t>(ch)];
            c[static_cast<size_t>(ch)] = std::min(0.98f, std::max(0.02f, v));
        }
        d.palette[id] = c;
    }
    d.texture_amp = texture_amp;
    d.texture_scale = texture_scale;
    d.layout_seed_offset = layout_seed_offset;
    return d;
}

}  // namespace

const std::vector<DomainSpec>& builtin_domains() {
    static const std::vector<DomainSpec> domains = {
        make_domain("dayville", {1.00f, 1.00f, 1.00f}, {0.00f, 0.00f, 0.00f}, 0.16f, 28, 11),
        make_domain("duskton", {0.90f, 0.78f, 0.66f}, {0.04f, 0.00f, -0.01f}, 0.20f, 14, 23),
        make_domain("nightburg", {0.55f, 0.60f, 0.70f}, {-0.03f, -0.03f, 0.02f}, 0.12f, 40,
                    37),
        make_domain("rainport", {0.78f, 0.84f, 0.92f}, {0.02f, 0.02f, 0.04f}, 0.15f, 20, 53),
    };
    return domains;
}

const DomainSpec& domain_by_name(const std::string& name) {
    for (const DomainSpec& d : builtin_domains())
        if (d.name == name) return d;
    throw ConfigError("unknown domain \"" + name + "\"");
}

// ---------------------------------------------------------------------------
// scene generator
// ---------------------------------------------------------------------------

namespace {

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

void paint_rect(LabelMap& labels, int y0, int y1, int x0, int x1, uint8_t id) {
    y0 = std::max(0, y0);
    x0 = std::max(0, x0);
    y1 = std::min(labels.h, y1);
    x1 = std::min(labels.w, x1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) labels.at(y, x) = id;
}

void paint_ellipse(LabelMap& labels, int cy, int cx, int ry, int rx, uint8_t id) {
    for (int y = std::max(0, cy - ry); y <= std::min(labels.h - 1, cy + ry); ++y) {
        for (int x = std::max(0, cx - rx); x <= std::min(labels.w - 1, cx + rx); ++x) {
            double dy = static_cast<double>(y - cy) / ry;
            double dx = static_cast<double>(x - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) labels.at(y, x) = id;
        }
    }
}

}  // namespace

void generate_scene(const DomainSpec& domain, uint64_t rng_seed, int h, int w,
                    Tensor3& image, LabelMap& full_labels) {
    if (h < 32 || w < 32 || !is_pow2(h) || !is_pow2(w))
        throw DimensionError("generate_scene: dims must be powers of two >= 32");

    Rng rng(mix_seed(rng_seed + static_cast<uint64_t>(domain.layout_seed_offset), 0x5CE17EULL));
    full_labels = LabelMap(h, w, 1);  // sky base coat

    const int sky_line = static_cast<int>(std::lround(rng.uniform(0.25, 0.40) * h));
    const int road_top = h - static_cast<int>(std::lround(rng.uniform(0.30, 0.45) * h));
    paint_rect(full_labels, road_top, h, 0, w, 2);

    const int n_buildings = rng.uniform_int(1, 3);
    for (int i = 0; i < n_buildings; ++i) {
        int bw = std::max(3, static_cast<int>(std::lround(rng.uniform(0.12, 0.30) * w)));
        int bx = rng.uniform_int(0, std::max(0, w - bw));
        int btop = rng.uniform_int(sky_line, std::max(sky_line, road_top - 2));
        paint_rect(full_labels, btop, road_top, bx, bx + bw, 3);
    }

    const int n_poles = rng.uniform_int(0, 2);
    for (int i = 0; i < n_poles; ++i) {
        int pw = rng.uniform_int(1, 2);
        int px = rng.uniform_int(0, std::max(0, w - pw));
        int ptop = rng.uniform_int(sky_line, std::max(sky_line, road_top - 1));
        int pbot = rng.uniform_int(road_top, std::min(h - 1, road_top + h / 8));
        paint_rect(full_labels, ptop, pbot + 1, px, px + pw, 4);
    }

    const int n_cars = rng.uniform_int(0, 3);
    for (int i = 0; i < n_cars; ++i) {
        int ry = std::max(2, static_cast<int>(std::lround(rng.uniform(0.04, 0.08) * h)));
        int rx = std::max(3, static_cast<int>(std::lround(rng.uniform(0.05, 0.10) * w)));
        int cy = rng.uniform_int(std::min(road_top + ry, h - 1 - ry), h - 1 - ry);
        int cx = rng.uniform_int(rx, std::max(rx, w - 1 - rx));
        paint_ellipse(full_labels, cy, cx, ry, rx, 5);
    }

    const int n_persons = rng.uniform_int(0, 2);
    for (int i = 0; i < n_persons; ++i) {
        int ry = std::max(2, static_cast<int>(std::lround(rng.uniform(0.05, 0.09) * h)));
        int rx = std::max(1, static_cast<int>(std::lround(0.4 * ry)));
        int cy = rng.uniform_int(std::min(road_top, h - 1 - ry), h - 1 - ry);
        int cx = rng.uniform_int(rx, std::max(rx, w - 1 - rx));
        paint_ellipse(full_labels, cy, cx, ry, rx, 6);
    }

    // low-frequency value noise grid, bilinear, shared across channels
    const int period = std::max(2, domain.texture_scale);
    const int gh = h / period + 2, gw = w / period + 2;
    std::vector<float> grid(static_cast<size_t>(gh) * gw);
    for (float& g : grid)
        g = static_cast<float>(rng.uniform(-domain.texture_amp, domain.texture_amp));

    image = Tensor3(h, w, 3);
    for (int y = 0; y < h; ++y) {
        const double gy = static_cast<double>(y) / period;
        const int y0 = static_cast<int>(gy);
        const double fy = gy - y0;
        for (int x = 0; x < w; ++x) {
            const double gx = static_cast<double>(x) / period;
            const int x0 = static_cast<int>(gx);
            const double fx = gx - x0;
            const double n00 = grid[static_cast<size_t>(y0) * gw + x0];
            const double n01 = grid[static_cast<size_t>(y0) * gw + x0 + 1];
            const double n10 = grid[static_cast<size_t>(y0 + 1) * gw + x0];
            const double n11 = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
            const double noise = (n00 * (1 - fx) + n01 * fx) * (1 - fy) +
                                 (n10 * (1 - fx) + n11 * fx) * fy;

            const auto it = domain.palette.find(full_labels.at(y, x));
            if (it == domain.palette.end())
                throw ConfigError("domain \"" + domain.name + "\" missing palette entry");
            for (int c = 0; c < 3; ++c) {
                double v = it->second[static_cast<size_t>(c)] + noise;
                if (domain.pixel_noise > 0.0f) v += rng.normal(0.0, domain.pixel_noise);
                image.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        }
    }
}

LabelMap mask_labels(const LabelMap& full, const std::vector<uint8_t>& class_set) {
    LabelMap out(full.h, full.w);
    bool in_set[256] = {false};
    for (uint8_t id : class_set) in_set[id] = true;
    for (size_t i = 0; i < full.ids.size(); ++i)
        out.ids[i] = in_set[full.ids[i]] ? full.ids[i] : kUnknownId;
    return out;
}

// ---------------------------------------------------------------------------
// PNM I/O
// ---------------------------------------------------------------------------

namespace {

void write_pnm_header(std::ofstream& out, const char* magic, int w, int h) {
    out << magic << "\n" << w << " " << h << "\n255\n";
}

// reads one whitespace-delimited token, skipping '#' comments
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw FormatError("malformed header in " + path);
    return tok;
}

int header_int(std::istream& in, const std::string& path) {
    std::string tok = next_token(in, path);
    try {
        size_t pos = 0;
        int v = std::stoi(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw FormatError("malformed header value \"" + tok + "\" in " + path);
    }
}

}  // namespace

void write_ppm(const std::string& path, const Tensor3& image) {
    if (image.c != 3) throw ShapeError("write_ppm: expected 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_pnm_header(out, "P6", image.w, image.h);
    std::vector<unsigned char> bytes(image.size());
    for (size_t i = 0; i < image.size(); ++i) {
        long q = std::lround(static_cast<double>(image.data[i]) * 255.0);
        bytes[i] = static_cast<unsigned char>(std::min(255L, std::max(0L, q)));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

Tensor3 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (next_token(in, path) != "P6") throw FormatError("expected P6 magic in " + path);
    int w = header_int(in, path), h = header_int(in, path), maxval = header_int(in, path);
    if (w < 1 || h < 1) throw FormatError("bad dimensions in " + path);
    if (maxval != 255) throw FormatError("unsupported maxval in " + path + " (must be 255)");
    Tensor3 image(h, w, 3);
    std::vector<unsigned char> bytes(image.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<size_t>(in.gcount()) != bytes.size())
        throw FormatError("truncated raster in " + path);
    for (size_t i = 0; i < bytes.size(); ++i)
        image.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    return image;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_pnm_header(out, "P5", labels.w, labels.h);
    out.write(reinterpret_cast<const char*>(labels.ids.data()),
              static_cast<std::streamsize>(labels.ids.size()));
    if (!out) throw IoError("failed writing " + path);
}

LabelMap read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (next_token(in, path) != "P5") throw FormatError("expected P5 magic in " + path);
    int w = header_int(in, path), h = header_int(in, path), maxval = header_int(in, path);
    if (w < 1 || h < 1) throw FormatError("bad dimensions in " + path);
    if (maxval != 255) throw FormatError("unsupported maxval in " + path + " (must be 255)");
    LabelMap labels(h, w);
    in.read(reinterpret_cast<char*>(labels.ids.data()),
            static_cast<std::streamsize>(labels.ids.size()));
    if (static_cast<size_t>(in.gcount()) != labels.ids.size())
        throw FormatError("truncated raster in " + path);
    return labels;
}

void write_sample(const std::string& stem, const LabeledSample& sample) {
    write_ppm(stem + ".ppm", sample.image);
    write_pgm(stem + ".full.pgm", sample.full_labels);
    write_pgm(stem + ".step.pgm", sample.step_labels);
}

LabeledSample read_sample(const std::string& stem) {
    LabeledSample s;
    s.image = read_ppm(stem + ".ppm");
    s.full_labels = read_pgm(stem + ".full.pgm");
    s.step_labels = read_pgm(stem + ".step.pgm");
    return s;
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

uint64_t train_seed(uint64_t base, int step, int index) {
    return base + 1000000ULL * static_cast<uint64_t>(step) + static_cast<uint64_t>(index);
}

uint64_t eval_seed(uint64_t base, int domain_index, int index) {
    return base + 500000000ULL + 1000000ULL * static_cast<uint64_t>(domain_index) +
           static_cast<uint64_t>(index);
}

uint64_t external_seed(uint64_t base, int index) {
    return base + 900000000ULL + static_cast<uint64_t>(index);
}

StepDataset build_step_dataset(const ClassSchedule& schedule,
                               const std::vector<DomainSpec>& domain_sequence, int t,
                               int n_train, int n_eval, uint64_t seed, int h, int w) {
    if (schedule.steps() != static_cast<int>(domain_sequence.size()))
        throw ConfigError("schedule and domain sequence lengths differ");
    if (t < 0 || t >= schedule.steps()) throw ConfigError("step out of range");

    StepDataset ds;
    ds.step = t;
    const std::vector<uint8_t>& class_set = schedule.set_at(t);
    std::vector<uint64_t> train_seeds;
    for (int i = 0; i < n_train; ++i) {
        LabeledSample s;
        uint64_t sd = train_seed(seed, t, i);
        train_seeds.push_back(sd);
        generate_scene(domain_sequence[static_cast<size_t>(t)], sd, h, w, s.image,
                       s.full_labels);
        s.step_labels = mask_labels(s.full_labels, class_set);
        ds.train.push_back(std::move(s));
    }

    nlohmann::json eval_seeds = nlohmann::json::object();
    for (int k = 0; k <= t; ++k) {
        std::vector<LabeledSample> evals;
        std::vector<uint64_t> seeds;
        for (int j = 0; j < n_eval; ++j) {
            LabeledSample s;
            uint64_t sd = eval_seed(seed, k, j);
            seeds.push_back(sd);
            generate_scene(domain_sequence[static_cast<size_t>(k)], sd, h, w, s.image,
                           s.full_labels);
            s.step_labels = s.full_labels;
            evals.push_back(std::move(s));
        }
        eval_seeds[domain_sequence[static_cast<size_t>(k)].name] = seeds;
        ds.eval_per_domain.push_back(std::move(evals));
    }

    ds.manifest = {{"step", t},
                   {"domain", domain_sequence[static_cast<size_t>(t)].name},
                   {"class_set", class_set},
                   {"train_seeds", train_seeds},
                   {"eval_seeds", eval_seeds},
                   {"h", h},
                   {"w", w}};
    return ds;
}

// ---------------------------------------------------------------------------
// sample store
// ---------------------------------------------------------------------------

SampleStore::SampleStore(const fs::path& root, bool fresh) : root_(root) {
    if (fresh) fs::remove_all(root_ / "data");
    fs::create_directories(root_ / "data");
    audit_.open(audit_path(), fresh ? std::ios::trunc : std::ios::app);
    if (!audit_) throw IoError("cannot open audit log at " + audit_path().string());
}

void SampleStore::set_phase(const std::string& phase) { phase_ = phase; }

namespace {

std::string sample_stem(const fs::path& dir, const char* prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, index);
    return (dir / buf).string();
}

void put_dir(const fs::path& dir, const char* prefix,
             const std::vector<LabeledSample>& samples) {
    fs::create_directories(dir);
    for (size_t i = 0; i < samples.size(); ++i)
        write_sample(sample_stem(dir, prefix, static_cast<int>(i)), samples[i]);
}

}  // namespace

void SampleStore::put_train(int step, const std::vector<LabeledSample>& samples) {
    put_dir(data_dir() / ("step" + std::to_string(step)), "train", samples);
}

void SampleStore::put_eval(const std::string& domain, const std::vector<LabeledSample>& samples) {
    put_dir(data_dir() / "eval" / domain, "eval", samples);
}

void SampleStore::put_external(const std::string& domain,
                               const std::vector<LabeledSample>& samples) {
    put_dir(data_dir() / "external" / domain, "eval", samples);
}

void SampleStore::put_manifest(int step, const nlohmann::json& manifest) {
    fs::path p = data_dir() / ("manifest_step" + std::to_string(step) + ".json");
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << manifest.dump(2) << "\n";
}

void SampleStore::log_read(const std::string& kind, const std::string& tag,
                           const std::string& path) const {
    audit_ << phase_ << "\t" << kind << "\t" << tag << "\t" << path << "\n";
    audit_.flush();
}

std::vector<LabeledSample> SampleStore::load_dir(const fs::path& dir, const std::string& kind,
                                                 const std::string& tag) const {
    if (!fs::exists(dir)) throw IoError("missing dataset directory " + dir.string());
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string p = entry.path().string();
        if (p.size() > 4 && p.substr(p.size() - 4) == ".ppm")
            stems.push_back(p.substr(0, p.size() - 4));
    }
    std::sort(stems.begin(), stems.end());
    std::vector<LabeledSample> out;
    out.reserve(stems.size());
    for (const std::string& stem : stems) {
        log_read(kind, tag, stem + ".ppm");
        log_read(kind, tag, stem + ".full.pgm");
        log_read(kind, tag, stem + ".step.pgm");
        out.push_back(read_sample(stem));
    }
    return out;
}

std::vector<LabeledSample> SampleStore::load_train(int step) const {
    return load_dir(data_dir() / ("step" + std::to_string(step)), "train",
                    std::to_string(step));
}

std::vector<LabeledSample> SampleStore::load_eval(const std::string& domain) const {
    return load_dir(data_dir() / "eval" / domain, "eval", domain);
}

std::vector<LabeledSample> SampleStore::load_external(const std::string& domain) const {
    return load_dir(data_dir() / "external" / domain, "external", domain);
}

int SampleStore::count_train(int step) const {
    fs::path dir = data_dir() / ("step" + std::to_string(step));
    if (!fs::exists(dir)) return 0;
    int n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string p = entry.path().string();
        if (p.size() > 4 && p.substr(p.size() - 4) == ".ppm") ++n;
    }
    return n;
}

uint64_t SampleStore::fingerprint() const {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(data_dir()))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const fs::path& f : files) {
        std::ifstream in(f, std::ios::binary);
        char buf[4096];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            for (std::streamsize i = 0; i < in.gcount(); ++i) {
                h ^= static_cast<unsigned char>(buf[i]);
                h *= 0x100000001b3ULL;
            }
            if (!in) break;
        }
    }
    return h;
}

}  // namespace stylecl
