#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cmda/error.hpp"

namespace cmda {

struct Spacing {
    float x = 1.0f, y = 1.0f, z = 1.0f;
    bool operator==(const Spacing&) const = default;
};

struct Origin {
    float x = 0.0f, y = 0.0f, z = 0.0f;
    bool operator==(const Origin&) const = default;
};

// Scalar voxel grid with physical spacing in mm. Voxel (i,j,k) sits at
// origin + (i*sx, j*sy, k*sz). Values are f32 working precision.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(int nx, int ny, int nz, Spacing spacing = {}, Origin origin = {})
        : nx_(nx), ny_(ny), nz_(nz), spacing_(spacing), origin_(origin) {
        check_geometry();
        voxels_.assign(numel(), 0.0f);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    std::size_t numel() const {
        return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_) *
               static_cast<std::size_t>(nz_);
    }
    Spacing spacing() const { return spacing_; }
    Origin origin() const { return origin_; }
    void set_spacing(Spacing s) { spacing_ = s; check_geometry(); }
    void set_origin(Origin o) { origin_ = o; }

    float& at(int i, int j, int k) { return voxels_[index(i, j, k)]; }
    float at(int i, int j, int k) const { return voxels_[index(i, j, k)]; }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(k) * static_cast<std::size_t>(ny_) * nx_ +
               static_cast<std::size_t>(j) * nx_ + static_cast<std::size_t>(i);
    }

    std::vector<float>& voxels() { return voxels_; }
    const std::vector<float>& voxels() const { return voxels_; }

    bool same_grid(const Volume3D& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_ && spacing_ == o.spacing_;
    }

    void validate() const {
        check_geometry();
        for (float v : voxels_)
            if (!std::isfinite(v)) throw FormatError("volume contains non-finite voxel");
    }

    bool operator==(const Volume3D&) const = default;

private:
    void check_geometry() const {
        if (nx_ < 1 || ny_ < 1 || nz_ < 1) throw ValidationError("volume dims must be >= 1");
        if (!(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0) ||
            !std::isfinite(spacing_.x) || !std::isfinite(spacing_.y) ||
            !std::isfinite(spacing_.z))
            throw ValidationError("voxel spacing must be positive and finite");
    }

    int nx_ = 1, ny_ = 1, nz_ = 1;
    Spacing spacing_;
    Origin origin_;
    std::vector<float> voxels_;
};

// Integer class grid aligned to a Volume3D. Classes are {0, 1, 2}:
// background, tumor analog, cochlea analog.
class LabelVolume {
public:
    static constexpr int kNumClasses = 3;

    LabelVolume() = default;
    LabelVolume(int nx, int ny, int nz, Spacing spacing = {}, Origin origin = {})
        : nx_(nx), ny_(ny), nz_(nz), spacing_(spacing), origin_(origin) {
        if (nx < 1 || ny < 1 || nz < 1) throw ValidationError("label dims must be >= 1");
        labels_.assign(numel(), 0);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    std::size_t numel() const {
        return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_) *
               static_cast<std::size_t>(nz_);
    }
    Spacing spacing() const { return spacing_; }
    Origin origin() const { return origin_; }
    void set_spacing(Spacing s) { spacing_ = s; }
    void set_origin(Origin o) { origin_ = o; }

    std::uint8_t& at(int i, int j, int k) { return labels_[index(i, j, k)]; }
    std::uint8_t at(int i, int j, int k) const { return labels_[index(i, j, k)]; }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(k) * static_cast<std::size_t>(ny_) * nx_ +
               static_cast<std::size_t>(j) * nx_ + static_cast<std::size_t>(i);
    }

    std::vector<std::uint8_t>& labels() { return labels_; }
    const std::vector<std::uint8_t>& labels() const { return labels_; }

    bool same_grid(const Volume3D& v) const {
        return nx_ == v.nx() && ny_ == v.ny() && nz_ == v.nz() && spacing_ == v.spacing();
    }
    bool same_grid(const LabelVolume& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_ && spacing_ == o.spacing_;
    }

    std::array<std::size_t, kNumClasses> class_counts() const {
        std::array<std::size_t, kNumClasses> c{};
        for (std::uint8_t l : labels_) c[l]++;
        return c;
    }

    void validate() const {
        for (std::uint8_t l : labels_)
            if (l >= kNumClasses) throw FormatError("label value outside class set {0,1,2}");
    }

    bool operator==(const LabelVolume&) const = default;

private:
    int nx_ = 1, ny_ = 1, nz_ = 1;
    Spacing spacing_;
    Origin origin_;
    std::vector<std::uint8_t> labels_;
};

}  // namespace cmda
