#ifndef JBSDE_IO_HPP
#define JBSDE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "jbsde/paths.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

// CSV writer with the run provenance stamped in a header comment. Doubles are
// written with 17 significant digits so reruns are byte-comparable.
class CsvWriter {
  public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns,
              std::uint64_t config_hash, std::uint64_t seed)
        : out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot open " + path.string());
        out_ << "# config_hash=" << hex64(config_hash) << " seed=" << seed << "\n";
        for (std::size_t i = 0; i < columns.size(); ++i)
            out_ << (i ? "," : "") << columns[i];
        out_ << "\n";
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i)
            out_ << (i ? "," : "") << format_double(values[i]);
        out_ << "\n";
    }

    void row(const std::string& label, const std::vector<double>& values) {
        out_ << label;
        for (const double v : values) out_ << "," << format_double(v);
        out_ << "\n";
    }

  private:
    std::ofstream out_;
};

// Summary statistics of a bundle: per grid point the ensemble mean/variance,
// the mean qv density over the preceding step and the realized jump rate.
inline void write_summary_csv(const std::filesystem::path& path, const PathBundle& b,
                              std::uint64_t config_hash) {
    CsvWriter csv(path, {"t", "mean", "var", "qv_mean", "jump_rate"}, config_hash, b.seed);
    const std::size_t N = b.n_steps();
    for (std::size_t k = 0; k <= N; ++k) {
        std::vector<double> vals(b.n_paths);
        for (std::size_t p = 0; p < b.n_paths; ++p) vals[p] = b.value(p, k);
        const SampleStats s = sample_stats(vals);
        double qv_mean = 0.0, jump_rate = 0.0;
        if (k > 0) {
            std::vector<double> qs(b.n_paths), js(b.n_paths);
            for (std::size_t p = 0; p < b.n_paths; ++p) {
                qs[p] = b.qv(p, k - 1);
                double count = 0.0;
                for (const auto& m : b.jump_marks[p])
                    if (m.time > b.grid[k - 1] && m.time <= b.grid[k]) count += 1.0;
                js[p] = count / b.dt(k - 1);
            }
            qv_mean = pairwise_sum(qs) / static_cast<double>(b.n_paths);
            jump_rate = pairwise_sum(js) / static_cast<double>(b.n_paths);
        }
        csv.row({b.grid[k], s.mean, s.variance, qv_mean, jump_rate});
    }
}

namespace detail {

inline void put_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline std::uint64_t get_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline std::vector<double> get_doubles(std::ifstream& in) {
    std::vector<double> v(get_u64(in));
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    return v;
}

inline nlohmann::json measure_to_json(const LevyBaseMeasure& m) {
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : m.atoms()) atoms.push_back({a.location, a.intensity});
    return {{"label", m.label()}, {"atoms", atoms}};
}

inline LevyBaseMeasure measure_from_json(const nlohmann::json& j) {
    std::vector<LevyAtom> atoms;
    for (const auto& a : j.at("atoms")) atoms.push_back({a.at(0), a.at(1)});
    return LevyBaseMeasure::make(std::move(atoms), j.value("label", std::string{}));
}

}  // namespace detail

// Columnar binary file (little-endian doubles) plus a JSON sidecar carrying
// the grid, seed, measure tag and compensator catalog.
inline void write_bundle(const PathBundle& b, const std::filesystem::path& basename) {
    std::ofstream bin(basename.string() + ".bin", std::ios::binary);
    if (!bin) throw Error("cannot open " + basename.string() + ".bin");
    bin.write("JBSDEPB1", 8);
    detail::put_u64(bin, b.n_paths);
    detail::put_u64(bin, b.n_steps());
    detail::put_doubles(bin, b.values);
    detail::put_doubles(bin, b.cont_inc);
    detail::put_doubles(bin, b.comp_drift);
    detail::put_doubles(bin, b.qv_density);
    detail::put_u64(bin, b.comp_idx.size());
    bin.write(reinterpret_cast<const char*>(b.comp_idx.data()),
              static_cast<std::streamsize>(b.comp_idx.size() * sizeof(std::uint32_t)));
    for (const auto& marks : b.jump_marks) {
        detail::put_u64(bin, marks.size());
        for (const auto& m : marks) {
            bin.write(reinterpret_cast<const char*>(&m.time), sizeof m.time);
            bin.write(reinterpret_cast<const char*>(&m.size), sizeof m.size);
        }
    }

    nlohmann::json side;
    side["format"] = "JBSDEPB1";
    side["grid"] = b.grid;
    side["seed"] = b.seed;
    side["measure_tag"] = b.measure_tag;
    side["base"] = detail::measure_to_json(b.base);
    side["compensator_catalog"] = nlohmann::json::array();
    for (const auto& m : b.compensator_catalog)
        side["compensator_catalog"].push_back(detail::measure_to_json(m));
    std::ofstream js(basename.string() + ".json", std::ios::binary);
    js << side.dump(2) << "\n";
}

inline PathBundle read_bundle(const std::filesystem::path& basename) {
    std::ifstream js(basename.string() + ".json");
    if (!js) throw Error("cannot open " + basename.string() + ".json");
    nlohmann::json side = nlohmann::json::parse(js);

    PathBundle b;
    b.grid = side.at("grid").get<std::vector<double>>();
    b.seed = side.at("seed").get<std::uint64_t>();
    b.measure_tag = side.at("measure_tag").get<std::string>();
    b.base = detail::measure_from_json(side.at("base"));
    for (const auto& m : side.at("compensator_catalog"))
        b.compensator_catalog.push_back(detail::measure_from_json(m));

    std::ifstream bin(basename.string() + ".bin", std::ios::binary);
    if (!bin) throw Error("cannot open " + basename.string() + ".bin");
    char magic[8];
    bin.read(magic, 8);
    if (std::string(magic, 8) != "JBSDEPB1") throw Error("bad bundle magic");
    b.n_paths = detail::get_u64(bin);
    const std::uint64_t n_steps = detail::get_u64(bin);
    if (n_steps != b.n_steps()) throw Error("bundle binary disagrees with sidecar grid");
    b.values = detail::get_doubles(bin);
    b.cont_inc = detail::get_doubles(bin);
    b.comp_drift = detail::get_doubles(bin);
    b.qv_density = detail::get_doubles(bin);
    b.comp_idx.resize(detail::get_u64(bin));
    bin.read(reinterpret_cast<char*>(b.comp_idx.data()),
             static_cast<std::streamsize>(b.comp_idx.size() * sizeof(std::uint32_t)));
    b.jump_marks.resize(b.n_paths);
    for (auto& marks : b.jump_marks) {
        marks.resize(detail::get_u64(bin));
        for (auto& m : marks) {
            bin.read(reinterpret_cast<char*>(&m.time), sizeof m.time);
            bin.read(reinterpret_cast<char*>(&m.size), sizeof m.size);
        }
    }
    if (!bin) throw Error("truncated bundle binary");
    return b;
}

}  // namespace jbsde

#endif  // JBSDE_IO_HPP
