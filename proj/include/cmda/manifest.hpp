#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cmda {

enum class Domain { kSource, kTarget };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& s);

// One dataset case: id, domain tag, image path and (for labeled cases) a
// label path. Paths are stored relative to the manifest location.
struct ManifestEntry {
    std::string case_id;
    Domain domain = Domain::kSource;
    std::string image_path;
    std::optional<std::string> label_path;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    const ManifestEntry* find(const std::string& case_id) const;
};

// Tab-separated text, one case per line:
//   case_id <TAB> source|target <TAB> image_path [<TAB> label_path]
// '#' starts a comment line.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace cmda
