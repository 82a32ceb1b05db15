#include "docsynth/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

using json = nlohmann::json;

namespace docsynth {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t)
{
    switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    case torch::kBool: return "bool";
    default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
    }
}

torch::ScalarType dtype_from_name(const std::string& name)
{
    if (name == "float32") return torch::kFloat32;
    if (name == "float64") return torch::kFloat64;
    if (name == "int64") return torch::kInt64;
    if (name == "int32") return torch::kInt32;
    if (name == "uint8") return torch::kUInt8;
    if (name == "bool") return torch::kBool;
    throw CheckpointError("unknown tensor dtype '" + name + "' in checkpoint");
}

template <typename T>
void put(std::vector<uint8_t>& out, T value)
{
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(const std::vector<uint8_t>& in, size_t& pos)
{
    if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt)
{
    json index = json::array();
    std::vector<torch::Tensor> payload;
    uint64_t offset = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        const uint64_t nbytes = t.numel() * t.element_size();
        index.push_back({{"name", name},
                         {"dtype", dtype_name(t.scalar_type())},
                         {"shape", t.sizes().vec()},
                         {"offset", offset},
                         {"nbytes", nbytes}});
        offset += nbytes;
        payload.push_back(std::move(t));
    }
    const std::string header = json{{"meta", ckpt.meta}, {"tensors", index}}.dump();

    std::vector<uint8_t> out;
    out.reserve(sizeof(kMagic) + 12 + header.size() + offset);
    out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    for (const auto& t : payload) {
        const auto* p = static_cast<const uint8_t*>(t.data_ptr());
        out.insert(out.end(), p, p + t.numel() * t.element_size());
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes)
{
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a docsynth checkpoint (bad magic)");
    size_t pos = sizeof(kMagic);
    const auto version = get<uint32_t>(bytes, pos);
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = get<uint64_t>(bytes, pos);
    if (pos + header_len > bytes.size()) throw CheckpointError("checkpoint truncated in header");
    json header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len), nullptr, false);
    if (header.is_discarded()) throw CheckpointError("checkpoint header is not valid JSON");
    pos += header_len;
    const size_t base = pos;

    Checkpoint ckpt;
    ckpt.meta = header.value("meta", json::object());
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto offset = entry.at("offset").get<uint64_t>();
        const auto nbytes = entry.at("nbytes").get<uint64_t>();
        if (base + offset + nbytes > bytes.size()) throw CheckpointError("checkpoint truncated in tensor '" + name + "'");
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes)
            throw CheckpointError("size mismatch for tensor '" + name + "'");
        std::memcpy(t.data_ptr(), bytes.data() + base + offset, nbytes);
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    const auto bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

void export_module(const std::string& prefix, const torch::nn::Module& module, Checkpoint& ckpt)
{
    for (const auto& item : module.named_parameters(true)) ckpt.tensors[prefix + "." + item.key()] = item.value().detach().clone();
    for (const auto& item : module.named_buffers(true)) ckpt.tensors[prefix + "." + item.key()] = item.value().detach().clone();
}

void import_module(const std::string& prefix, torch::nn::Module& module, const Checkpoint& ckpt)
{
    torch::NoGradGuard no_grad;
    auto restore = [&](const std::string& key, torch::Tensor& target) {
        const auto name = prefix + "." + key;
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
        if (it->second.sizes() != target.sizes())
            throw CheckpointError("shape mismatch for '" + name + "'");
        target.copy_(it->second);
    };
    for (auto& item : module.named_parameters(true)) restore(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) restore(item.key(), item.value());
}

void export_adam(const std::string& prefix, const torch::nn::Module& owner, const torch::optim::Adam& optimizer,
                 Checkpoint& ckpt)
{
    json steps = json::object();
    const auto& state = optimizer.state();
    for (const auto& item : owner.named_parameters(true)) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        const auto base = prefix + "." + item.key();
        ckpt.tensors[base + ".exp_avg"] = s.exp_avg().detach().clone();
        ckpt.tensors[base + ".exp_avg_sq"] = s.exp_avg_sq().detach().clone();
        steps[item.key()] = s.step();
    }
    ckpt.meta["optimizer_steps"][prefix] = std::move(steps);
}

void import_adam(const std::string& prefix, const torch::nn::Module& owner, torch::optim::Adam& optimizer,
                 const Checkpoint& ckpt)
{
    auto& state = optimizer.state();
    state.clear();
    const auto steps_it = ckpt.meta.find("optimizer_steps");
    if (steps_it == ckpt.meta.end() || !steps_it->contains(prefix)) return;  // optimizer never stepped
    const auto& steps = steps_it->at(prefix);
    for (const auto& item : owner.named_parameters(true)) {
        if (!steps.contains(item.key())) continue;
        const auto base = prefix + "." + item.key();
        auto avg = ckpt.tensors.find(base + ".exp_avg");
        auto avg_sq = ckpt.tensors.find(base + ".exp_avg_sq");
        if (avg == ckpt.tensors.end() || avg_sq == ckpt.tensors.end())
            throw CheckpointError("checkpoint lacks optimizer moments for '" + base + "'");
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(steps.at(item.key()).get<int64_t>());
        s->exp_avg(avg->second.clone());
        s->exp_avg_sq(avg_sq->second.clone());
        state[item.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

std::vector<std::string> config_differences(const ModelConfig& expected, const ModelConfig& stored)
{
    const auto a = to_json_value(expected);
    const auto b = to_json_value(stored);
    std::vector<std::string> diffs;
    for (const auto& [key, value] : a.items()) {
        if (!b.contains(key) || b.at(key) != value)
            diffs.push_back(key + ": expected " + value.dump() + ", checkpoint has " +
                            (b.contains(key) ? b.at(key).dump() : std::string("nothing")));
    }
    return diffs;
}

ModelSnapshot load_model_snapshot(const std::filesystem::path& path)
{
    auto ckpt = read_checkpoint(path);
    ModelSnapshot snap;
    try {
        snap.config = train_config_from_json(ckpt.meta.at("config"));
        snap.vocab = CategoryVocab(ckpt.meta.at("vocab").get<std::vector<std::string>>());
        snap.iteration = ckpt.meta.value("iteration", int64_t{0});
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint metadata incomplete: " + std::string(e.what()));
    }
    snap.model = GeneratorBundle(snap.config.model);
    import_module("generator", *snap.model, ckpt);
    snap.model->eval();
    snap.source = path;
    return snap;
}

}  // namespace docsynth
