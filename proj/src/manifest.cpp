#include "cmda/manifest.hpp"

#include <fstream>
#include <sstream>

#include "cmda/error.hpp"

namespace cmda {

std::string domain_name(Domain d) {
    return d == Domain::kSource ? "source" : "target";
}

Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::kSource;
    if (s == "target") return Domain::kTarget;
    throw FormatError("unknown domain tag '" + s + "'");
}

const ManifestEntry* Manifest::find(const std::string& case_id) const {
    for (const auto& e : entries)
        if (e.case_id == case_id) return &e;
    return nullptr;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 3 || fields.size() > 4)
            throw FormatError("manifest line " + std::to_string(lineno) +
                              ": expected 3 or 4 tab-separated fields");
        ManifestEntry e;
        e.case_id = fields[0];
        e.domain = parse_domain(fields[1]);
        e.image_path = fields[2];
        if (fields.size() == 4 && !fields[3].empty()) e.label_path = fields[3];
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open manifest " + path.string() + " for writing");
    for (const auto& e : m.entries) {
        f << e.case_id << '\t' << domain_name(e.domain) << '\t' << e.image_path;
        if (e.label_path) f << '\t' << *e.label_path;
        f << '\n';
    }
    if (!f) throw IoError("write failed for manifest " + path.string());
}

}  // namespace cmda
