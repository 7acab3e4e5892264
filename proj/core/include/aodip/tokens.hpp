#pragma once

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace aodip {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class TokenRole { credential, image, domain, class_embedding };

std::string_view to_string(TokenRole role);

/// Role-tagged vector of length d_tok that occupies one slot of a prompt.
struct Token {
    TokenRole role = TokenRole::credential;
    Vec values;

    bool operator==(const Token& other) const {
        return role == other.role && values.size() == other.values.size() && values == other.values;
    }
};

/// Ordered token sequence [credential, image, domain, class] fed to the text encoder.
/// class_index == N names the unauthorized class.
struct Prompt {
    std::vector<Token> tokens;
    int class_index = 0;

    /// Concatenation of all token values in slot order.
    Vec flatten() const;
};

}  // namespace aodip
