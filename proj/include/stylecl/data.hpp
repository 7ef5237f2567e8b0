#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stylecl/tensor.hpp"

namespace stylecl {

// Ordered class splits. Real ids start at 1; id 0 is the unknown class u and
// implicitly belongs to every set; id 255 is the ignore label.
struct ClassSchedule {
    std::vector<std::vector<uint8_t>> sets;
    std::map<uint8_t, std::string> class_names;

    int steps() const { return static_cast<int>(sets.size()); }
    const std::vector<uint8_t>& set_at(int t) const;
    // real class ids of steps 0..t, in step order
    std::vector<uint8_t> classes_up_to(int t) const;
    std::vector<uint8_t> all_classes() const { return classes_up_to(steps() - 1); }
    uint64_t hash() const;
    void validate() const;
};

ClassSchedule default_schedule();

struct DomainSpec {
    std::string name;
    std::map<uint8_t, std::array<float, 3>> palette;  // class id -> base RGB in [0,1]
    float texture_amp = 0.0f;   // low-frequency noise amplitude
    int texture_scale = 16;     // noise period in pixels
    int layout_seed_offset = 0;
    float pixel_noise = 0.01f;  // per-pixel gaussian sigma
};

// built-in domains: dayville, duskton, nightburg, rainport
const std::vector<DomainSpec>& builtin_domains();
const DomainSpec& domain_by_name(const std::string& name);

struct LabeledSample {
    Tensor3 image;        // H x W x 3, [0,1]
    LabelMap full_labels; // complete ground truth, real ids only
    LabelMap step_labels; // masked to the current class set, off-set -> u
};

// Deterministic synthetic scene: sky/road bands, buildings, poles, cars,
// persons, painter's order sky < road < building < pole < car < person.
void generate_scene(const DomainSpec& domain, uint64_t rng_seed, int h, int w,
                    Tensor3& image, LabelMap& full_labels);

LabelMap mask_labels(const LabelMap& full, const std::vector<uint8_t>& class_set);

// PNM I/O. Images as binary PPM (P6, maxval 255), labels as binary PGM (P5).
void write_ppm(const std::string& path, const Tensor3& image);
Tensor3 read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

// sample stem -> stem.ppm, stem.full.pgm, stem.step.pgm
void write_sample(const std::string& stem, const LabeledSample& sample);
LabeledSample read_sample(const std::string& stem);

// seed partitioning; train and eval ranges never overlap
uint64_t train_seed(uint64_t base, int step, int index);
uint64_t eval_seed(uint64_t base, int domain_index, int index);
uint64_t external_seed(uint64_t base, int index);

struct StepDataset {
    int step = 0;
    std::vector<LabeledSample> train;
    std::vector<std::vector<LabeledSample>> eval_per_domain;  // k = 0..step
    nlohmann::json manifest;
};

StepDataset build_step_dataset(const ClassSchedule& schedule,
                               const std::vector<DomainSpec>& domain_sequence, int t,
                               int n_train, int n_eval, uint64_t seed, int h, int w);

// On-disk dataset layout rooted at <root>/data with an append-only access log
// (<root>/io_audit.log). Every file read is recorded with the active phase;
// the exemplar-free audit checks that no past-step training file is read
// while a later step trains.
class SampleStore {
public:
    SampleStore(const std::filesystem::path& root, bool fresh);

    void set_phase(const std::string& phase);

    void put_train(int step, const std::vector<LabeledSample>& samples);
    void put_eval(const std::string& domain, const std::vector<LabeledSample>& samples);
    void put_external(const std::string& domain, const std::vector<LabeledSample>& samples);
    void put_manifest(int step, const nlohmann::json& manifest);

    std::vector<LabeledSample> load_train(int step) const;
    std::vector<LabeledSample> load_eval(const std::string& domain) const;
    std::vector<LabeledSample> load_external(const std::string& domain) const;
    int count_train(int step) const;

    // FNV-1a over every data file's bytes, paths sorted
    uint64_t fingerprint() const;

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path data_dir() const { return root_ / "data"; }
    std::filesystem::path audit_path() const { return root_ / "io_audit.log"; }

private:
    std::vector<LabeledSample> load_dir(const std::filesystem::path& dir,
                                        const std::string& kind, const std::string& tag) const;
    void log_read(const std::string& kind, const std::string& tag,
                  const std::string& path) const;

    std::filesystem::path root_;
    std::string phase_ = "idle";
    mutable std::ofstream audit_;
};

}  // namespace stylecl
