#pragma once

#include "aodip/domain_forge.hpp"
#include "aodip/training.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace aodip {

struct CredentialRecord {
    std::string domain_id;
    Token token;             // role credential, length token_dim
    std::string issued_at;   // ISO-8601 UTC; metadata only, never digested
    Digest reference_digest{};
    Digest checkpoint_digest{};
};

void to_json(nlohmann::json& j, const CredentialRecord& r);
void from_json(const nlohmann::json& j, CredentialRecord& r);

/// Append-only JSON array of records. Writes are serialized within the process and land
/// through a temporary file plus rename, so readers never see a torn file.
class CredentialStore {
public:
    explicit CredentialStore(std::filesystem::path path);

    const std::filesystem::path& path() const { return path_; }

    std::vector<CredentialRecord> records() const;
    /// Most recent record for domain_id; throws CredentialNotFound if none exists.
    CredentialRecord latest(const std::string& domain_id) const;
    std::optional<CredentialRecord> find_latest(const std::string& domain_id) const;

    /// Throws StorageError when the file cannot be written.
    void append(const CredentialRecord& record);

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
};

using Clock = std::function<std::chrono::system_clock::time_point()>;

std::string iso8601_utc(std::chrono::system_clock::time_point t);

/// Mean visual feature of the reference set, passed through P_enc. The checkpoint is read only.
Token credential_for(const DomainDataset& reference, const Checkpoint& ck);

/// Issues and persists a credential for reference.domain_id. Throws InvalidInput on an empty reference.
CredentialRecord issue_credential(const DomainDataset& reference, const Checkpoint& ck, CredentialStore& store,
                                  const Clock& clock = {});

}  // namespace aodip
