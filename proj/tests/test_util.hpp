#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "lobeseg/volume.hpp"

namespace lobeseg::test {

class TempDir {
public:
    TempDir()
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lobeseg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

template <class Rng>
LabelVolume random_labels(Dims d, int labels, Rng& rng)
{
    LabelVolume v(d, {}, labels);
    for (auto& x : v.data) x = static_cast<std::uint8_t>(rng() % static_cast<unsigned>(labels));
    return v;
}

template <class Rng>
Mask random_mask(Dims d, double density, Rng& rng, Spacing s = {})
{
    std::bernoulli_distribution bit(density);
    Mask m(d, s, 0);
    for (auto& x : m.data) x = bit(rng) ? 1 : 0;
    if (count_nonzero(m) == 0) m[rng() % m.size()] = 1;
    return m;
}

} // namespace lobeseg::test
