#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dcl/session_store.hpp"

namespace dcl {

/// The frozen relevance model M(C, d) that defines pair difficulty.
class ScoreSource {
public:
    virtual ~ScoreSource() = default;

    virtual double score(const SearchContext& context, std::string_view doc_id) const = 0;

    /// M(C, d) for every document, aligned with DocumentTable order.
    /// Must agree exactly with score().
    virtual std::vector<double> score_corpus(const SearchContext& context) const = 0;

    virtual std::string name() const = 0;
    virtual std::string digest() const = 0;
};

}  // namespace dcl
