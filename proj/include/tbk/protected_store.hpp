#pragma once
// Protected block store: fixed-size encrypted blocks behind a small LRU
// cache, persisted to a host-visible backing file. Integrity is always
// enforced (secretbox MAC); freshness (rollback protection) binds the
// backing file's flush counter to a monotonic counter the enclave keeps in
// RAM — the vulnerable profile skips only the freshness comparison.
//
// Backing layout (little-endian):
//   [0..24)   header plaintext: magic u64, counter u64, nblocks u64
//   [24..64)  header seal: secretbox(header plaintext), nonce = (~0, counter)
//   block i at 64 + i*(8 + 256 + 16): ver u64 plaintext, then
//   secretbox(block bytes), nonce = (i, ver)

#include <array>
#include <cstring>
#include <list>
#include <map>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sodium.h>
#include <unistd.h>

#include "tbk/types.hpp"

namespace tbk {

class ProtectedStore {
  public:
    static constexpr size_t kBlockSize = 256;
    static constexpr uint64_t kMagic = 0x70667374307265ull; // "pfst0re"
    static constexpr size_t kHeaderPlain = 24;
    static constexpr size_t kSealOverhead = crypto_secretbox_MACBYTES; // 16
    static constexpr size_t kHeaderSize = 64;
    static constexpr size_t kBlockSlot = 8 + kBlockSize + kSealOverhead;

    enum class OpenResult { Fresh, Ok, RejectedFreshness, RejectedIntegrity };
    enum class ReadResult { Ok, IntegrityFail, Missing };

    ProtectedStore(std::string path, std::array<uint8_t, 32> key, int64_t cache_blocks,
                   bool freshness_check)
        : path_(std::move(path)), key_(key), cache_cap_(size_t(cache_blocks)),
          freshness_check_(freshness_check) {
        if (sodium_init() < 0) throw Error("sodium_init failed");
    }

    ~ProtectedStore() {
        if (fd_ >= 0) ::close(fd_);
    }

    // expected_counter: the enclave's in-RAM monotonic counter; pass 0 when
    // no prior state is known (first open).
    OpenResult open(int64_t expected_counter, int64_t nblocks) {
        fd_ = ::open(path_.c_str(), O_RDWR, 0644);
        if (fd_ < 0) {
            reset(nblocks);
            return OpenResult::Fresh;
        }
        uint8_t hdr[kHeaderSize];
        if (pread_all(hdr, sizeof hdr, 0) != 0) {
            ::close(fd_);
            fd_ = -1;
            return OpenResult::RejectedIntegrity;
        }
        uint64_t magic, counter, nb;
        memcpy(&magic, hdr, 8);
        memcpy(&counter, hdr + 8, 8);
        memcpy(&nb, hdr + 16, 8);
        uint8_t nonce[crypto_secretbox_NONCEBYTES] = {};
        uint64_t idx = ~0ull;
        memcpy(nonce, &idx, 8);
        memcpy(nonce + 8, &counter, 8);
        uint8_t plain[kHeaderPlain];
        if (magic != kMagic ||
            crypto_secretbox_open_easy(plain, hdr + kHeaderPlain,
                                       kHeaderPlain + kSealOverhead, nonce,
                                       key_.data()) != 0 ||
            memcmp(plain, hdr, kHeaderPlain) != 0) {
            ::close(fd_);
            fd_ = -1;
            return OpenResult::RejectedIntegrity;
        }
        counter_ = int64_t(counter);
        nblocks_ = int64_t(nb);
        // Freshness: a backing file older than what this enclave already
        // committed is a rollback. Equality (replay of the present) is legal.
        if (freshness_check_ && counter_ < expected_counter) {
            ::close(fd_);
            fd_ = -1;
            return OpenResult::RejectedFreshness;
        }
        return OpenResult::Ok;
    }

    void reset(int64_t nblocks) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
        if (fd_ < 0) throw Error("store: cannot create " + path_);
        counter_ = 0;
        nblocks_ = nblocks;
        cache_.clear();
        lru_.clear();
        write_header();
        std::array<uint8_t, kBlockSize> zero{};
        for (int64_t i = 0; i < nblocks; i++) write_block_to_file(i, zero.data(), 0);
    }

    void close_store() {
        flush_all();
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    bool write_block(int64_t idx, const uint8_t* data) {
        if (idx < 0 || idx >= nblocks_) return false;
        touch(idx);
        Entry& e = cache_[idx];
        memcpy(e.data.data(), data, kBlockSize);
        e.dirty = true;
        evict_if_needed();
        return true;
    }

    ReadResult read_block(int64_t idx, uint8_t* out) {
        if (idx < 0 || idx >= nblocks_) return ReadResult::Missing;
        auto it = cache_.find(idx);
        if (it != cache_.end()) {
            touch(idx);
            memcpy(out, it->second.data.data(), kBlockSize);
            return ReadResult::Ok;
        }
        std::array<uint8_t, kBlockSize> buf{};
        if (!load_block(idx, buf.data())) return ReadResult::IntegrityFail;
        touch(idx);
        Entry& e = cache_[idx];
        e.data = buf;
        e.dirty = false;
        memcpy(out, buf.data(), kBlockSize);
        evict_if_needed();
        return ReadResult::Ok;
    }

    // Commits every dirty block under version counter+1, then the header.
    void flush_all() {
        if (fd_ < 0) return;
        bool any = false;
        for (auto& [idx, e] : cache_)
            if (e.dirty) {
                write_block_to_file(idx, e.data.data(), counter_ + 1);
                e.dirty = false;
                any = true;
            }
        if (any) {
            counter_++;
            write_header();
        }
    }

    int64_t counter() const { return counter_; }
    int64_t eviction_flushes() const { return eviction_flushes_; }
    int64_t nblocks() const { return nblocks_; }

  private:
    struct Entry {
        std::array<uint8_t, kBlockSize> data{};
        bool dirty = false;
    };

    void touch(int64_t idx) {
        for (auto it = lru_.begin(); it != lru_.end(); ++it)
            if (*it == idx) {
                lru_.erase(it);
                break;
            }
        lru_.push_back(idx);
    }

    void evict_if_needed() {
        while (cache_.size() > cache_cap_ && !lru_.empty()) {
            int64_t victim = lru_.front();
            lru_.pop_front();
            auto it = cache_.find(victim);
            if (it == cache_.end()) continue;
            if (it->second.dirty) {
                // Eviction commits one block early, under the next version.
                write_block_to_file(victim, it->second.data.data(), counter_ + 1);
                eviction_flushes_++;
            }
            cache_.erase(it);
        }
    }

    void block_nonce(uint8_t* nonce, uint64_t idx, uint64_t ver) const {
        memset(nonce, 0, crypto_secretbox_NONCEBYTES);
        memcpy(nonce, &idx, 8);
        memcpy(nonce + 8, &ver, 8);
    }

    void write_header() {
        uint8_t hdr[kHeaderSize] = {};
        uint64_t magic = kMagic, counter = uint64_t(counter_), nb = uint64_t(nblocks_);
        memcpy(hdr, &magic, 8);
        memcpy(hdr + 8, &counter, 8);
        memcpy(hdr + 16, &nb, 8);
        uint8_t nonce[crypto_secretbox_NONCEBYTES];
        block_nonce(nonce, ~0ull, counter);
        crypto_secretbox_easy(hdr + kHeaderPlain, hdr, kHeaderPlain, nonce, key_.data());
        pwrite_all(hdr, sizeof hdr, 0);
    }

    void write_block_to_file(int64_t idx, const uint8_t* data, int64_t ver) {
        uint8_t slot[kBlockSlot];
        uint64_t v = uint64_t(ver);
        memcpy(slot, &v, 8);
        uint8_t nonce[crypto_secretbox_NONCEBYTES];
        block_nonce(nonce, uint64_t(idx), v);
        crypto_secretbox_easy(slot + 8, data, kBlockSize, nonce, key_.data());
        pwrite_all(slot, sizeof slot, off_t(kHeaderSize + size_t(idx) * kBlockSlot));
    }

    bool load_block(int64_t idx, uint8_t* out) {
        uint8_t slot[kBlockSlot];
        if (pread_all(slot, sizeof slot, off_t(kHeaderSize + size_t(idx) * kBlockSlot)) != 0)
            return false;
        uint64_t ver;
        memcpy(&ver, slot, 8);
        uint8_t nonce[crypto_secretbox_NONCEBYTES];
        block_nonce(nonce, uint64_t(idx), ver);
        return crypto_secretbox_open_easy(out, slot + 8, kBlockSize + kSealOverhead, nonce,
                                          key_.data()) == 0;
    }

    int pread_all(void* buf, size_t n, off_t off) const {
        size_t got = 0;
        while (got < n) {
            ssize_t r = ::pread(fd_, static_cast<uint8_t*>(buf) + got, n - got,
                                off + off_t(got));
            if (r <= 0) return -1;
            got += size_t(r);
        }
        return 0;
    }

    void pwrite_all(const void* buf, size_t n, off_t off) const {
        size_t put = 0;
        while (put < n) {
            ssize_t r = ::pwrite(fd_, static_cast<const uint8_t*>(buf) + put, n - put,
                                 off + off_t(put));
            if (r <= 0) throw Error("store: write failed");
            put += size_t(r);
        }
    }

    std::string path_;
    std::array<uint8_t, 32> key_;
    size_t cache_cap_;
    bool freshness_check_;
    int fd_ = -1;
    int64_t counter_ = 0;
    int64_t nblocks_ = 0;
    int64_t eviction_flushes_ = 0;
    std::map<int64_t, Entry> cache_;
    std::list<int64_t> lru_; // front = least recently used
};

// Fixed test key: confidentiality is not under test, binding/freshness are.
inline std::array<uint8_t, 32> store_test_key() {
    std::array<uint8_t, 32> k{};
    for (size_t i = 0; i < k.size(); i++) k[i] = uint8_t(0x40 + i);
    return k;
}

} // namespace tbk
