#pragma once
// Result files: legacy VTK structured points, convergence CSV, run diagnostics.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/integrator.hpp"
#include "haptoflow/verification.hpp"

namespace haptoflow {

/// Shortest round-trip decimal form, independent of the C locale.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc()) throw RuntimeFailure("format_double failed");
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ValidationError("not a number: '" + s + "'");
    return v;
}

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("cannot open " + path + " for writing");
    os << text;
    if (!os) throw RuntimeFailure("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace detail

using NamedField = std::pair<std::string, const std::vector<double>*>;

/// Vertex (dual-cell) scalar fields as legacy ASCII STRUCTURED_POINTS.
inline std::string vtk_text(const Grid& grid, const std::vector<NamedField>& fields) {
    for (const auto& [name, data] : fields) {
        if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
            throw ValidationError("VTK field name must be a single non-empty token: '" + name + "'");
        if (!data || static_cast<int>(data->size()) != grid.vertex_count())
            throw ValidationError("VTK field '" + name + "' does not match the grid");
    }
    std::string out = "# vtk DataFile Version 3.0\nhaptoflow\nASCII\nDATASET STRUCTURED_POINTS\n";
    out += "DIMENSIONS";
    for (int d = 0; d < 3; ++d) out += " " + std::to_string(d < grid.dim ? grid.n_vertices[d] : 1);
    out += "\nORIGIN";
    for (int d = 0; d < 3; ++d) out += " " + format_double(d < grid.dim ? grid.origin(d) : 0.0);
    out += "\nSPACING";
    for (int d = 0; d < 3; ++d) out += " " + format_double(d < grid.dim ? grid.spacing(d) : 1.0);
    out += "\nPOINT_DATA " + std::to_string(grid.vertex_count()) + "\n";
    for (const auto& [name, data] : fields) {
        out += "SCALARS " + name + " double 1\nLOOKUP_TABLE default\n";
        for (double v : *data) {
            out += format_double(v);
            out += '\n';
        }
    }
    return out;
}

inline void write_field_vtk(const std::string& path, const Grid& grid, const std::vector<NamedField>& fields) {
    detail::write_text(path, vtk_text(grid, fields));
}

struct VtkFile {
    std::array<int, 3> dims{1, 1, 1};
    std::vector<std::string> names;
    std::map<std::string, std::vector<double>> fields;
};

inline VtkFile read_field_vtk(const std::string& path) {
    std::istringstream is(detail::read_text(path));
    VtkFile f;
    std::string tok;
    std::size_t npts = 0;
    while (is >> tok) {
        if (tok == "DIMENSIONS") {
            is >> f.dims[0] >> f.dims[1] >> f.dims[2];
        } else if (tok == "POINT_DATA") {
            is >> npts;
        } else if (tok == "SCALARS") {
            std::string name, type, lut, lutname;
            int comps = 1;
            is >> name >> type >> comps >> lut >> lutname;
            if (comps != 1 || lut != "LOOKUP_TABLE") throw ValidationError("VTK: unsupported SCALARS block");
            std::vector<double> vals(npts);
            for (std::size_t i = 0; i < npts; ++i) {
                std::string s;
                if (!(is >> s)) throw ValidationError("VTK: field '" + name + "' is truncated");
                vals[i] = parse_double(s);
            }
            f.names.push_back(name);
            f.fields[name] = std::move(vals);
        }
    }
    return f;
}

inline std::string convergence_csv_text(const ConvergenceStudy& study) {
    if (study.levels.empty()) throw ValidationError("convergence study has no levels");
    const auto rates = study.rates();
    std::string out = "level,points,dx,l2_error,rate\n";
    for (std::size_t l = 0; l < study.levels.size(); ++l) {
        const auto& lv = study.levels[l];
        out += std::to_string(l) + "," + std::to_string(lv.points) + "," + format_double(lv.dx) + "," +
               format_double(lv.error) + ",";
        if (l > 0) out += format_double(rates[l - 1]);
        out += "\n";
    }
    return out;
}

inline void write_convergence_csv(const std::string& path, const ConvergenceStudy& study) {
    detail::write_text(path, convergence_csv_text(study));
}

inline ConvergenceStudy read_convergence_csv(const std::string& path) {
    std::istringstream is(detail::read_text(path));
    std::string line;
    if (!std::getline(is, line) || line != "level,points,dx,l2_error,rate")
        throw ValidationError("convergence CSV: unexpected header in " + path);
    ConvergenceStudy s;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        if (cols.size() < 4) throw ValidationError("convergence CSV: short row '" + line + "'");
        ConvergenceLevel lv;
        lv.points = static_cast<int>(parse_double(cols[1]));
        lv.dx = parse_double(cols[2]);
        lv.error = parse_double(cols[3]);
        s.levels.push_back(lv);
    }
    return s;
}

/// Appends run diagnostics as CSV rows; writes the header when the file is new.
class DiagnosticsLog {
public:
    explicit DiagnosticsLog(const std::string& path) : os_(path, std::ios::binary) {
        if (!os_) throw RuntimeFailure("cannot open " + path + " for writing");
        os_ << "step,time,dt,mass,rho_min,rho_max,step_norm\n";
    }
    void add(const Diagnostics& d) {
        os_ << d.step << ',' << format_double(d.time) << ',' << format_double(d.dt) << ',' << format_double(d.mass)
            << ',' << format_double(d.rho_min) << ',' << format_double(d.rho_max) << ','
            << format_double(d.step_norm) << '\n';
    }

private:
    std::ofstream os_;
};

}  // namespace haptoflow
