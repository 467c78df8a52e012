#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdac {

/// Error thrown by all library operations. `code` groups related failures
/// so callers (notably the CLI) can map them to exit statuses.
class Error : public std::runtime_error {
public:
    enum class Code {
        BadDimensions,
        BadValue,
        NonFinite,
        DegenerateMask,
        Io,
    };

    Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

/// H×W scalar field, row-major, 64-bit.
struct Field {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Field() = default;
    Field(int w, int h, double fill = 0.0) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw Error(Error::Code::BadDimensions, "Field: non-positive size");
        data.assign(size_t(w) * h, fill);
    }

    double& at(int y, int x) { return data[size_t(y) * width + x]; }
    double at(int y, int x) const { return data[size_t(y) * width + x]; }
    size_t size() const { return data.size(); }

    bool same_shape(const Field& o) const { return width == o.width && height == o.height; }
};

/// H×W(×C) raster with intensities in [0,1]; channels interleaved.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3))
            throw Error(Error::Code::BadDimensions, "Image: bad shape");
        data.assign(size_t(w) * h * c, fill);
    }

    double& at(int y, int x, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const { return data[(size_t(y) * width + x) * channels + c]; }
};

/// Binary segmentation mask, values in {0,1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw Error(Error::Code::BadDimensions, "Mask: non-positive size");
        data.assign(size_t(w) * h, fill);
    }

    uint8_t& at(int y, int x) { return data[size_t(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[size_t(y) * width + x]; }
    size_t size() const { return data.size(); }
};

/// Paired per-pixel weights on interior/exterior residuals; strictly positive.
struct ParameterMaps {
    Field lambda1;
    Field lambda2;
};

/// Luminance conversion (Rec. 601) for multi-channel inputs; the contour
/// evolution operates on a scalar intensity field.
inline Field luminance(const Image& img) {
    Field out(img.width, img.height);
    if (img.channels == 1) {
        out.data.assign(img.data.begin(), img.data.end());
        return out;
    }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    return out;
}

}  // namespace tdac
