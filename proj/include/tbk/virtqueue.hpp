#pragma once
// Virtqueue model over a bounded byte arena with offset addressing (no real
// pointers cross the model boundary). The descriptor-table validator is a
// pure function so it can be checked exhaustively against a brute-force
// bounds oracle.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tbk/types.hpp"

namespace tbk {

inline constexpr uint16_t kVqDescFNext = 1;
inline constexpr uint32_t kRssMaxKeyLen = 40; // config-space cap for hash keys

struct VqDesc {
    uint64_t addr = 0; // arena offset
    uint32_t len = 0;
    uint16_t flags = 0;
    uint16_t next = 0;
};

struct VqUsed {
    uint32_t id = 0;  // head descriptor index
    uint32_t len = 0; // bytes the device claims it wrote
};

struct VqView {
    uint16_t ring_size = 0; // power of two
    uint64_t arena_size = 0;
    std::vector<VqDesc> table; // ring_size entries
};

// Guest-side validation of a device-supplied used entry against the
// descriptor table. Returns a reason when the entry must be rejected.
// Contract:
//  - head index within the ring
//  - chain terminates within ring_size steps and never revisits an entry
//  - every descriptor with len>0 lies entirely inside the arena
//  - next pointers stay within the ring
//  - used.len fits the chain's posted capacity
inline std::optional<std::string> validate_used(const VqView& v, const VqUsed& u) {
    if (v.table.size() != v.ring_size) return "descriptor table size mismatch";
    if (u.id >= v.ring_size) return "used id beyond ring";
    std::vector<bool> seen(v.ring_size, false);
    uint64_t capacity = 0;
    uint16_t i = uint16_t(u.id);
    for (uint16_t steps = 0;; steps++) {
        if (steps >= v.ring_size) return "chain longer than ring";
        if (seen[i]) return "descriptor chain cycle";
        seen[i] = true;
        const VqDesc& d = v.table[i];
        if (d.len > 0 && (d.addr >= v.arena_size || d.addr + d.len > v.arena_size))
            return "descriptor outside arena";
        capacity += d.len;
        if (!(d.flags & kVqDescFNext)) break;
        if (d.next >= v.ring_size) return "next beyond ring";
        i = d.next;
    }
    if (u.len > capacity) return "used length beyond posted capacity";
    return std::nullopt;
}

inline bool validate_hash_key_len(uint32_t len) { return len <= kRssMaxKeyLen; }

// ---------------------------------------------------------------------------
// DMA page: payload plus a little header the device must keep consistent.
// The guest re-checksums before consuming; randomized pages fail the check.

struct DmaPage {
    uint32_t len = 0;
    uint32_t csum = 0;
    std::vector<uint8_t> payload;
};

inline uint32_t dma_csum(const std::vector<uint8_t>& payload) {
    uint32_t s = 0x811c9dc5u;
    for (uint8_t b : payload) s = (s ^ b) * 16777619u;
    return s;
}

inline DmaPage dma_make(std::vector<uint8_t> payload) {
    DmaPage p;
    p.len = uint32_t(payload.size());
    p.csum = dma_csum(payload);
    p.payload = std::move(payload);
    return p;
}

inline bool dma_verify(const DmaPage& p) {
    return p.len == p.payload.size() && p.csum == dma_csum(p.payload);
}

// ---------------------------------------------------------------------------
// Simulation harness: guest posts chains, a device half replies. The device
// half is the host's creature — mutation plans act there.

class VirtQueueSim {
  public:
    VirtQueueSim(uint16_t ring_size, uint64_t arena_size)
        : arena_(arena_size, 0) {
        if (!ring_size || (ring_size & (ring_size - 1)))
            throw Error("virtq: ring size must be a power of two");
        view_.ring_size = ring_size;
        view_.arena_size = arena_size;
        view_.table.assign(ring_size, VqDesc{});
    }

    VqView& view() { return view_; }
    const VqView& view() const { return view_; }
    std::vector<uint8_t>& arena() { return arena_; }

    // Guest: place a buffer chain into the table; returns head index.
    uint16_t post_chain(const std::vector<std::pair<uint64_t, uint32_t>>& bufs) {
        if (bufs.empty() || bufs.size() > view_.ring_size)
            throw Error("virtq: bad chain length");
        uint16_t head = next_free_;
        for (size_t k = 0; k < bufs.size(); k++) {
            uint16_t idx = uint16_t((next_free_ + k) % view_.ring_size);
            VqDesc& d = view_.table[idx];
            d.addr = bufs[k].first;
            d.len = bufs[k].second;
            d.flags = (k + 1 < bufs.size()) ? kVqDescFNext : 0;
            d.next = uint16_t((idx + 1) % view_.ring_size);
        }
        next_free_ = uint16_t((next_free_ + bufs.size()) % view_.ring_size);
        return head;
    }

    // Guest: consume a used entry under the given validation policy. The
    // model clamps actual copies (this process must not fault); `accepted`
    // reports whether an invalid device reply was consumed unchecked.
    struct Consumed {
        bool rejected = false; // validation refused the entry
        bool accepted_invalid = false;
        uint64_t bytes = 0;
        std::string detail;
    };

    Consumed consume(const VqUsed& used, bool validate) {
        Consumed c;
        auto verdict = validate_used(view_, used);
        if (validate) {
            if (verdict) {
                c.rejected = true;
                c.detail = *verdict;
                return c;
            }
        } else if (verdict) {
            c.accepted_invalid = true;
            c.detail = *verdict;
        }
        // Walk the chain copying up to used.len bytes, clamped to the arena.
        uint64_t remaining = used.len;
        uint16_t i = uint16_t(used.id % view_.ring_size);
        for (uint16_t steps = 0; steps < view_.ring_size && remaining; steps++) {
            const VqDesc& d = view_.table[i];
            uint64_t lo = std::min<uint64_t>(d.addr, view_.arena_size);
            uint64_t hi = std::min<uint64_t>(d.addr + d.len, view_.arena_size);
            uint64_t take = std::min<uint64_t>(hi > lo ? hi - lo : 0, remaining);
            c.bytes += take;
            remaining -= take;
            if (!(d.flags & kVqDescFNext)) break;
            i = uint16_t(d.next % view_.ring_size);
        }
        return c;
    }

  private:
    VqView view_;
    std::vector<uint8_t> arena_;
    uint16_t next_free_ = 0;
};

} // namespace tbk
