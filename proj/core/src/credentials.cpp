#include "aodip/credentials.hpp"

#include "aodip/errors.hpp"
#include "aodip/json_util.hpp"

#include <nlohmann/json.hpp>

#include <ctime>
#include <fstream>

namespace aodip {

void to_json(nlohmann::json& j, const CredentialRecord& r) {
    j = nlohmann::json{{"domain_id", r.domain_id},
                       {"token", vector_to_json(r.token.values)},
                       {"issued_at", r.issued_at},
                       {"reference_digest", to_hex(r.reference_digest)},
                       {"checkpoint_digest", to_hex(r.checkpoint_digest)}};
}

void from_json(const nlohmann::json& j, CredentialRecord& r) {
    r.domain_id = j.at("domain_id").get<std::string>();
    r.token = Token{TokenRole::credential, vector_from_json(j.at("token"))};
    r.issued_at = j.at("issued_at").get<std::string>();
    r.reference_digest = digest_from_hex(j.at("reference_digest").get<std::string>());
    r.checkpoint_digest = digest_from_hex(j.at("checkpoint_digest").get<std::string>());
}

CredentialStore::CredentialStore(std::filesystem::path path) : path_(std::move(path)) {}

namespace {

std::vector<CredentialRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        return {};
    }
    try {
        return nlohmann::json::parse(in).get<std::vector<CredentialRecord>>();
    } catch (const nlohmann::json::exception& e) {
        throw StorageError("corrupt credential store " + path.string() + ": " + e.what());
    }
}

}  // namespace

std::vector<CredentialRecord> CredentialStore::records() const {
    std::lock_guard lock(mu_);
    return read_records(path_);
}

std::optional<CredentialRecord> CredentialStore::find_latest(const std::string& domain_id) const {
    const auto all = records();
    for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if (it->domain_id == domain_id) {
            return *it;
        }
    }
    return std::nullopt;
}

CredentialRecord CredentialStore::latest(const std::string& domain_id) const {
    auto r = find_latest(domain_id);
    if (!r) {
        throw CredentialNotFound("no credential issued for domain '" + domain_id + "'");
    }
    return *r;
}

void CredentialStore::append(const CredentialRecord& record) {
    std::lock_guard lock(mu_);
    auto all = read_records(path_);
    all.push_back(record);
    auto tmp = path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw StorageError("cannot write credential store " + tmp.string());
        }
        out << nlohmann::json(all).dump(1) << '\n';
        if (!out) {
            throw StorageError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) {
        throw StorageError("cannot replace " + path_.string() + ": " + ec.message());
    }
}

std::string iso8601_utc(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Token credential_for(const DomainDataset& reference, const Checkpoint& ck) {
    if (reference.empty()) {
        throw InvalidInput("credential issuance needs a non-empty reference set");
    }
    const Backbone backbone = Backbone::instantiate(ck.backbone);
    const EncodedBatch enc = encode_batch(backbone, reference);
    return derive_credential(enc.f_v.rowwise().mean(), ck.projectors);
}

CredentialRecord issue_credential(const DomainDataset& reference, const Checkpoint& ck, CredentialStore& store,
                                  const Clock& clock) {
    CredentialRecord rec;
    rec.domain_id = reference.domain_id;
    rec.token = credential_for(reference, ck);
    rec.issued_at = iso8601_utc(clock ? clock() : std::chrono::system_clock::now());
    rec.reference_digest = dataset_digest(reference);
    rec.checkpoint_digest = checkpoint_digest(ck);
    store.append(rec);
    return rec;
}

}  // namespace aodip
