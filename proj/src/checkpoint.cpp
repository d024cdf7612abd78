#include "swinseg/checkpoint.hpp"

#include "swinseg/dataio.hpp"

namespace swinseg {

namespace {

NpyArray f32_array(const Shape& shape, const std::vector<float>& data) {
    return make_npy_f32(shape, data);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store, const AdamW* opt,
                     const CheckpointMeta& meta) {
    Npz npz;
    for (const ParamDecl& d : store.decls()) {
        const Tensor<float>& t = store.at(d.name);
        npz.add("param/" + d.name, f32_array(t->shape, t->data));
    }
    if (opt) {
        for (const std::string& n : opt->names()) {
            const Shape shape{static_cast<int64_t>(opt->m_state(n).size())};
            npz.add("opt/m/" + n, f32_array(shape, opt->m_state(n)));
            npz.add("opt/v/" + n, f32_array(shape, opt->v_state(n)));
        }
        npz.add("meta/opt_t", make_npy_i64({}, {opt->t()}));
    }
    npz.add("meta/step", make_npy_i64({}, {meta.step}));
    npz.add("meta/lr", make_npy_f64({}, {meta.lr}));
    npz.add("meta/plateau_best", make_npy_f64({}, {meta.plateau_best}));
    npz.add("meta/plateau_bad", make_npy_i64({}, {meta.plateau_bad}));
    npz.extras.push_back(ZipEntry{
        "config", [&] {
            const std::string j = store.config().to_json();
            return std::vector<uint8_t>(j.begin(), j.end());
        }()});
    npz_write_file(path, npz);
}

ModelConfig checkpoint_config(const std::string& path) {
    const Npz npz = npz_read_file(path);
    const ZipEntry* cfg = npz.extra("config");
    if (!cfg) throw CheckpointError("checkpoint " + path + " has no config entry");
    return ModelConfig::from_json(std::string(cfg->data.begin(), cfg->data.end()));
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>& store, AdamW* opt) {
    const Npz npz = npz_read_file(path);
    const ZipEntry* cfg_entry = npz.extra("config");
    if (!cfg_entry) throw CheckpointError("checkpoint " + path + " has no config entry");
    const ModelConfig cfg =
        ModelConfig::from_json(std::string(cfg_entry->data.begin(), cfg_entry->data.end()));
    store = ParamStore<float>(cfg);

    std::string missing;
    for (const ParamDecl& d : store.decls()) {
        const std::string key = "param/" + d.name;
        if (!npz.has(key)) {
            missing += missing.empty() ? d.name : ", " + d.name;
            continue;
        }
        const NpyArray& arr = npz.at(key);
        if (arr.shape != d.shape)
            throw CheckpointError("checkpoint " + path + ": parameter " + d.name + " has shape " +
                                  shape_str(arr.shape) + ", expected " + shape_str(d.shape));
        if (arr.dtype != NpyArray::Dtype::F32)
            throw CheckpointError("checkpoint " + path + ": parameter " + d.name + " is not f32");
        Tensor<float> t = store.at(d.name);
        std::copy(arr.f32(), arr.f32() + arr.numel(), t->data.begin());
    }
    if (!missing.empty())
        throw CheckpointError("checkpoint " + path + " missing parameters: " + missing);

    CheckpointMeta meta;
    if (npz.has("meta/step")) meta.step = npz.at("meta/step").i64()[0];
    if (npz.has("meta/lr")) meta.lr = npz.at("meta/lr").f64()[0];
    if (npz.has("meta/plateau_best")) meta.plateau_best = npz.at("meta/plateau_best").f64()[0];
    if (npz.has("meta/plateau_bad")) meta.plateau_bad = npz.at("meta/plateau_bad").i64()[0];

    if (opt) {
        size_t present = 0;
        for (const std::string& n : opt->names())
            if (npz.has("opt/m/" + n) && npz.has("opt/v/" + n)) ++present;
        if (present > 0 && present < opt->names().size())
            throw CheckpointError("checkpoint " + path + ": incomplete optimizer state (" +
                                  std::to_string(present) + " of " +
                                  std::to_string(opt->names().size()) + " entries)");
        if (present == opt->names().size() && present > 0) {
            for (const std::string& n : opt->names()) {
                const NpyArray& m = npz.at("opt/m/" + n);
                const NpyArray& v = npz.at("opt/v/" + n);
                opt->restore(n, std::vector<float>(m.f32(), m.f32() + m.numel()),
                             std::vector<float>(v.f32(), v.f32() + v.numel()));
            }
            if (npz.has("meta/opt_t")) opt->set_t(npz.at("meta/opt_t").i64()[0]);
            meta.has_optimizer = true;
        }
    }
    return meta;
}

}  // namespace swinseg
