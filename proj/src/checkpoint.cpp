#include "ma2mi/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ma2mi::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'A', '2', 'M', 'I', 'C', 'K', '1'};

void write_u64(std::ostream& os, uint64_t v) { os.write((const char*)&v, 8); }

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read((char*)&v, 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), (std::streamsize)s.size());
}

std::string read_str(std::istream& is) {
    uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), (std::streamsize)n);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

bool Archive::has(const std::string& name) const {
    for (auto& [n, _] : entries)
        if (n == name) return true;
    return false;
}

const std::pair<Shape, std::vector<double>>& Archive::get(const std::string& name) const {
    for (auto& [n, e] : entries)
        if (n == name) return e;
    throw std::out_of_range("checkpoint: no entry named " + name);
}

void Archive::put(const std::string& name, Shape shape, std::vector<double> values) {
    if (has(name)) throw std::invalid_argument("checkpoint: duplicate entry " + name);
    entries.emplace_back(name, std::make_pair(std::move(shape), std::move(values)));
}

void save_archive(const std::string& path, const Archive& a) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(kMagic, 8);
    write_str(f, a.meta.dump());
    write_u64(f, a.entries.size());
    for (auto& [name, e] : a.entries) {
        write_str(f, name);
        write_u64(f, e.first.size());
        for (int d : e.first) write_u64(f, (uint64_t)d);
        write_u64(f, e.second.size());
        f.write((const char*)e.second.data(), (std::streamsize)(e.second.size() * 8));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Archive load_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Archive a;
    a.meta = nlohmann::json::parse(read_str(f));
    uint64_t n = read_u64(f);
    a.entries.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = read_str(f);
        uint64_t nd = read_u64(f);
        Shape shape(nd);
        for (auto& d : shape) d = (int)read_u64(f);
        uint64_t len = read_u64(f);
        std::vector<double> vals(len);
        f.read((char*)vals.data(), (std::streamsize)(len * 8));
        if (!f) throw std::runtime_error("checkpoint: truncated tensor " + name);
        a.entries.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(vals)));
    }
    return a;
}

void put_params(Archive& a, const std::string& prefix, const nn::ParamMap& pm) {
    for (auto& [n, t] : pm.params) a.put(prefix + "." + n, t.shape(), t.data());
    for (auto& [n, b] : pm.buffers) a.put(prefix + ".buf." + n, {(int)b->size()}, *b);
}

void load_params(const Archive& a, const std::string& prefix, const nn::ParamMap& pm) {
    for (auto& [n, t] : pm.params) {
        auto& e = a.get(prefix + "." + n);
        if (e.first != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + prefix + "." + n);
        Tensor live = t;  // shares the node
        live.data() = e.second;
    }
    for (auto& [n, b] : pm.buffers) {
        auto& e = a.get(prefix + ".buf." + n);
        if (e.second.size() != b->size())
            throw std::runtime_error("checkpoint: buffer size mismatch for " + prefix + "." + n);
        *b = e.second;
    }
}

void put_adamw(Archive& a, const std::string& prefix, const nn::AdamW& opt) {
    a.put(prefix + ".t", {1}, {(double)opt.t});
    for (size_t i = 0; i < opt.slots.size(); ++i) {
        const auto& s = opt.slots[i];
        if (s.m.empty()) continue;  // parameter never received a gradient yet
        a.put(prefix + ".m." + std::to_string(i), {(int)s.m.size()}, s.m);
        a.put(prefix + ".v." + std::to_string(i), {(int)s.v.size()}, s.v);
    }
}

void load_adamw(const Archive& a, const std::string& prefix, nn::AdamW& opt) {
    opt.t = (long long)a.get(prefix + ".t").second[0];
    for (size_t i = 0; i < opt.slots.size(); ++i) {
        std::string mk = prefix + ".m." + std::to_string(i);
        if (!a.has(mk)) continue;
        opt.slots[i].m = a.get(mk).second;
        opt.slots[i].v = a.get(prefix + ".v." + std::to_string(i)).second;
    }
}

}  // namespace ma2mi::ckpt
