#include "ermpp/checkpoint.hpp"

#include "binio.hpp"

namespace ermpp {

namespace {
constexpr char kMagic[] = "EMPPCKPT";
constexpr uint32_t kVersion = 1;
}  // namespace

std::string serialize_checkpoint(const ModelState& s, uint64_t spec_hash, bool averaged) {
    binio::Writer w;
    for (const char* p = kMagic; *p; ++p) w.u8(static_cast<uint8_t>(*p));
    w.u32(kVersion);
    w.u64(spec_hash);
    w.u8(averaged ? 1 : 0);
    w.i64(s.step);
    w.u32(static_cast<uint32_t>(s.params.size()));
    for (const auto& [name, values] : s.params) {
        w.str(name);
        w.f64_array(values);
    }
    w.u32(static_cast<uint32_t>(s.bn_stats.size()));
    for (const auto& [name, st] : s.bn_stats) {
        w.str(name);
        w.f64_array(st.mean);
        w.f64_array(st.var);
    }
    return binio::finish_with_crc(w);
}

void save_checkpoint(const ModelState& s, uint64_t spec_hash, const std::string& path,
                     bool averaged) {
    binio::write_file(path, serialize_checkpoint(s, spec_hash, averaged));
}

ModelState load_checkpoint(const std::string& path, uint64_t* spec_hash, bool* averaged) {
    std::string bytes = binio::read_file(path, "checkpoint");
    const size_t magic_len = sizeof(kMagic) - 1;
    if (bytes.size() < magic_len || bytes.compare(0, magic_len, kMagic) != 0) {
        throw FileFormatError("not a checkpoint file (bad magic): " + path);
    }
    bytes = binio::check_crc(std::move(bytes), "checkpoint");
    binio::Reader r(std::move(bytes), "checkpoint");
    for (size_t i = 0; i < magic_len; ++i) r.u8();
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw FileFormatError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kVersion) + ")");
    }
    const uint64_t hash = r.u64();
    const bool avg = r.u8() != 0;
    ModelState s;
    s.step = r.i64();
    const uint32_t nparams = r.u32();
    for (uint32_t i = 0; i < nparams; ++i) {
        std::string name = r.str();
        s.params[name] = r.f64_array();
    }
    const uint32_t nbn = r.u32();
    for (uint32_t i = 0; i < nbn; ++i) {
        std::string name = r.str();
        BnStats st;
        st.mean = r.f64_array();
        st.var = r.f64_array();
        s.bn_stats[name] = std::move(st);
    }
    if (spec_hash) *spec_hash = hash;
    if (averaged) *averaged = avg;
    return s;
}

std::string state_digest(const ModelState& s, uint64_t spec_hash, bool averaged) {
    return binio::crc32_hex(serialize_checkpoint(s, spec_hash, averaged));
}

}  // namespace ermpp
