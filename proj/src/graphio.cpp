#include "vecformer/graphio.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "vecformer/errors.hpp"

namespace vecformer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string() + " for writing");
    f << text;
    if (!f) throw IoError("short write to " + p.string());
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw FormatError("missing file " + p.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string fmt_double(double v) {
    char buf[32];
    const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(len));
}

// Splits CSV text into rows of fields; reports 1-based line numbers.
struct CsvReader {
    std::string text;
    std::string filename;

    template <typename RowFn>
    void for_each_row(RowFn&& fn) const {
        std::size_t pos = 0;
        std::int64_t line_no = 0;
        std::vector<std::string_view> fields;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string_view line(text.data() + pos, eol - pos);
            ++line_no;
            if (!line.empty()) {
                fields.clear();
                std::size_t start = 0;
                for (;;) {
                    const std::size_t comma = line.find(',', start);
                    if (comma == std::string_view::npos) {
                        fields.push_back(line.substr(start));
                        break;
                    }
                    fields.push_back(line.substr(start, comma - start));
                    start = comma + 1;
                }
                fn(line_no, fields);
            }
            pos = eol + 1;
        }
    }

    std::int64_t parse_int(std::int64_t line, std::string_view s) const {
        std::int64_t v = 0;
        const auto* begin = s.data();
        const auto* end = s.data() + s.size();
        const auto res = std::from_chars(begin, end, v);
        if (res.ec != std::errc{} || res.ptr != end)
            throw FormatError(filename + ":" + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
        return v;
    }

    double parse_double(std::int64_t line, std::string_view s) const {
        try {
            std::size_t used = 0;
            const std::string tmp(s);
            const double v = std::stod(tmp, &used);
            if (used != tmp.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw FormatError(filename + ":" + std::to_string(line) + ": bad real '" + std::string(s) + "'");
        }
    }
};

}  // namespace

void save_graph(const GraphDataset& ds, const fs::path& dir) {
    ds.validate();
    fs::create_directories(dir);

    json header;
    header["version"] = kGraphContainerVersion;
    header["n"] = ds.n();
    header["d"] = ds.feat_dim();
    header["num_classes"] = ds.num_classes;
    header["symmetric"] = ds.adjacency.symmetric();
    header["fields"] = {{"labels", ds.multilabel() ? "binary_matrix" : "int"}, {"env", ds.has_env()}};
    write_text(dir / "graph.json", header.dump(2) + "\n");

    std::string edges;
    for (const auto& [s, d] : ds.adjacency.edges()) {
        if (ds.adjacency.symmetric() && s > d) continue;  // store closure once
        edges += std::to_string(s) + "," + std::to_string(d) + "\n";
    }
    write_text(dir / "edges.csv", edges);

    std::string feats;
    for (std::int64_t i = 0; i < ds.n(); ++i) {
        for (std::int64_t j = 0; j < ds.feat_dim(); ++j) {
            if (j) feats += ",";
            feats += fmt_double(ds.features.at(i, j));
        }
        feats += "\n";
    }
    write_text(dir / "features.csv", feats);

    std::string labels;
    if (ds.multilabel()) {
        for (std::int64_t i = 0; i < ds.n(); ++i) {
            for (std::int64_t j = 0; j < ds.num_classes; ++j) {
                if (j) labels += ",";
                labels += ds.label_matrix.at(i, j) != 0.0 ? "1" : "0";
            }
            labels += "\n";
        }
    } else {
        for (auto l : ds.labels) labels += std::to_string(l) + "\n";
    }
    write_text(dir / "labels.csv", labels);

    if (ds.has_env()) {
        std::string env;
        for (auto e : ds.environment_id) env += std::to_string(e) + "\n";
        write_text(dir / "env.csv", env);
    }
}

Tensor load_csv_matrix(const fs::path& file) {
    CsvReader r{read_text(file), file.string()};
    std::vector<double> data;
    std::int64_t rows = 0, cols = -1;
    r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
        if (cols < 0) cols = static_cast<std::int64_t>(f.size());
        if (static_cast<std::int64_t>(f.size()) != cols)
            throw FormatError(r.filename + ":" + std::to_string(line) + ": ragged row, expected " +
                              std::to_string(cols) + " columns");
        for (const auto& field : f) data.push_back(r.parse_double(line, field));
        ++rows;
    });
    if (rows == 0) throw FormatError(file.string() + ": empty matrix");
    return Tensor({rows, cols}, std::move(data));
}

GraphDataset load_graph(const fs::path& dir) {
    json header;
    try {
        header = json::parse(read_text(dir / "graph.json"));
    } catch (const json::exception& e) {
        throw FormatError((dir / "graph.json").string() + ": " + e.what());
    }
    const auto get = [&](const char* key) -> const json& {
        if (!header.contains(key))
            throw FormatError((dir / "graph.json").string() + ": missing key '" + key + "'");
        return header.at(key);
    };
    if (get("version").get<int>() != kGraphContainerVersion)
        throw FormatError("unsupported container version " + get("version").dump());
    const std::int64_t n = get("n").get<std::int64_t>();
    const std::int64_t d = get("d").get<std::int64_t>();
    const std::int64_t num_classes = get("num_classes").get<std::int64_t>();
    const bool symmetric = get("symmetric").get<bool>();
    const json& fields = get("fields");
    const std::string label_mode = fields.value("labels", "int");
    const bool has_env = fields.value("env", false);
    if (n < 0 || d < 0 || num_classes < 1)
        throw FormatError((dir / "graph.json").string() + ": invalid extents");

    // edges
    std::vector<Edge> edges;
    {
        CsvReader r{read_text(dir / "edges.csv"), (dir / "edges.csv").string()};
        r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
            if (f.size() != 2)
                throw FormatError(r.filename + ":" + std::to_string(line) + ": expected 2 columns, got " +
                                  std::to_string(f.size()));
            const std::int64_t s = r.parse_int(line, f[0]);
            const std::int64_t t = r.parse_int(line, f[1]);
            if (s < 0 || s >= n || t < 0 || t >= n)
                throw FormatError(r.filename + ":" + std::to_string(line) + ": edge (" + std::to_string(s) +
                                  "," + std::to_string(t) + ") out of range for n=" + std::to_string(n));
            edges.emplace_back(s, t);
        });
    }

    // features
    Tensor features({n, d});
    {
        CsvReader r{read_text(dir / "features.csv"), (dir / "features.csv").string()};
        std::int64_t row = 0;
        r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
            if (row >= n)
                throw FormatError(r.filename + ":" + std::to_string(line) + ": more than " +
                                  std::to_string(n) + " feature rows");
            if (static_cast<std::int64_t>(f.size()) != d)
                throw FormatError(r.filename + ":" + std::to_string(line) + ": expected " + std::to_string(d) +
                                  " columns, got " + std::to_string(f.size()));
            for (std::int64_t j = 0; j < d; ++j)
                features.at(row, j) = r.parse_double(line, f[static_cast<std::size_t>(j)]);
            ++row;
        });
        if (row != n)
            throw FormatError(r.filename + ": expected " + std::to_string(n) + " rows, got " +
                              std::to_string(row));
    }

    GraphDataset ds{SparseAdjacency(0, {}, false, false), Tensor{}, {}, Tensor{}, num_classes, {}};
    ds.features = std::move(features);

    // labels
    {
        CsvReader r{read_text(dir / "labels.csv"), (dir / "labels.csv").string()};
        if (label_mode == "int") {
            r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
                if (f.size() != 1)
                    throw FormatError(r.filename + ":" + std::to_string(line) + ": expected 1 column");
                ds.labels.push_back(r.parse_int(line, f[0]));
            });
            if (static_cast<std::int64_t>(ds.labels.size()) != n)
                throw FormatError(r.filename + ": expected " + std::to_string(n) + " labels, got " +
                                  std::to_string(ds.labels.size()));
        } else if (label_mode == "binary_matrix") {
            ds.label_matrix = Tensor({n, num_classes});
            std::int64_t row = 0;
            r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
                if (row >= n || static_cast<std::int64_t>(f.size()) != num_classes)
                    throw FormatError(r.filename + ":" + std::to_string(line) + ": bad label row");
                for (std::int64_t j = 0; j < num_classes; ++j) {
                    const std::int64_t v = r.parse_int(line, f[static_cast<std::size_t>(j)]);
                    if (v != 0 && v != 1)
                        throw FormatError(r.filename + ":" + std::to_string(line) + ": labels must be 0/1");
                    ds.label_matrix.at(row, j) = static_cast<double>(v);
                }
                ++row;
            });
            if (row != n) throw FormatError(r.filename + ": expected " + std::to_string(n) + " rows");
        } else {
            throw FormatError((dir / "graph.json").string() + ": unknown label mode '" + label_mode + "'");
        }
    }

    if (has_env) {
        CsvReader r{read_text(dir / "env.csv"), (dir / "env.csv").string()};
        r.for_each_row([&](std::int64_t line, const std::vector<std::string_view>& f) {
            if (f.size() != 1)
                throw FormatError(r.filename + ":" + std::to_string(line) + ": expected 1 column");
            ds.environment_id.push_back(r.parse_int(line, f[0]));
        });
        if (static_cast<std::int64_t>(ds.environment_id.size()) != n)
            throw FormatError(r.filename + ": expected " + std::to_string(n) + " env rows");
    }

    try {
        ds.adjacency = symmetric ? SparseAdjacency::symmetrized(n, std::move(edges))
                                 : SparseAdjacency(n, std::move(edges), false, false);
    } catch (const StructuralError& e) {
        throw FormatError((dir / "edges.csv").string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

}  // namespace vecformer
