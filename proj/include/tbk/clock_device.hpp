#pragma once
// Paravirtual clock device: the host publishes a time transform in a shared
// file (kvmclock-style coefficient page); the target derives virtual time
// from it. The injector rewrites the file during its ARMED window.
//
// virt(real) = frozen ? base_virt
//            : base_virt + (real - base_real) * rate_num / rate_den

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

#include <fcntl.h>
#include <unistd.h>

#include "tbk/types.hpp"

namespace tbk {

struct ClockTransform {
    int64_t base_real = 0; // host monotonic ns anchor
    int64_t base_virt = 0; // virtual ns at the anchor
    int64_t rate_num = 1;
    int64_t rate_den = 1;
    int64_t frozen = 0;
    int64_t res_advertised_ns = 1'000'000; // device-claimed resolution (1ms)

    int64_t virt_at(int64_t real) const {
        if (frozen) return base_virt;
        __int128 d = __int128(real - base_real) * rate_num;
        return base_virt + int64_t(d / (rate_den ? rate_den : 1));
    }

    friend bool operator==(const ClockTransform&, const ClockTransform&) = default;
};

class ClockDevice {
  public:
    ClockDevice() = default;
    explicit ClockDevice(std::string path) : path_(std::move(path)) {}

    const std::string& path() const { return path_; }

    static ClockTransform pristine(int64_t now_real) {
        ClockTransform t;
        t.base_real = now_real;
        t.base_virt = now_real; // identity: virtual time == host monotonic
        return t;
    }

    void write(const ClockTransform& t) const {
        int64_t raw[6] = {t.base_real, t.base_virt,   t.rate_num,
                          t.rate_den,  t.frozen,      t.res_advertised_ns};
        std::string tmp = path_ + ".tmp";
        int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd < 0) throw Error("clockdev: cannot open " + tmp);
        ssize_t n = ::write(fd, raw, sizeof raw);
        ::close(fd);
        if (n != sizeof raw) throw Error("clockdev: short write");
        if (::rename(tmp.c_str(), path_.c_str()) != 0)
            throw Error("clockdev: rename failed");
    }

    ClockTransform read() const {
        int fd = ::open(path_.c_str(), O_RDONLY);
        if (fd < 0) throw Error("clockdev: missing device file " + path_);
        int64_t raw[6];
        ssize_t n = ::read(fd, raw, sizeof raw);
        ::close(fd);
        if (n != sizeof raw) throw Error("clockdev: short read");
        ClockTransform t;
        t.base_real = raw[0];
        t.base_virt = raw[1];
        t.rate_num = raw[2];
        t.rate_den = raw[3];
        t.frozen = raw[4];
        t.res_advertised_ns = raw[5];
        return t;
    }

    void ensure_exists() const {
        if (::access(path_.c_str(), F_OK) != 0) write(pristine(int64_t(now_mono_ns())));
    }

  private:
    std::string path_;
};

} // namespace tbk
