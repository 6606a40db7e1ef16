#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "imqa/corpus.hpp"
#include "imqa/providers.hpp"
#include "imqa/relation.hpp"
#include "imqa/shqa.hpp"

namespace imqa {

class ClusterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClusterOrigin { Keyword, CitationPool };

std::string to_string(ClusterOrigin o);
ClusterOrigin cluster_origin_from_string(std::string_view s);

inline constexpr std::size_t kDefaultClusterSize = 30;

struct PaperCluster {
  std::string cluster_id;
  std::string source_doc_id;
  std::string target_doc_id;
  std::vector<std::string> member_doc_ids;  // sorted by doc_id
  ClusterOrigin origin = ClusterOrigin::Keyword;

  // Throws ClusterError unless members are unique, contain the target, exclude
  // the source, and (when expected_size > 0) number exactly expected_size.
  void validate(std::size_t expected_size) const;
};

struct RetrievalQa {
  std::string question;
  std::string answer;
  std::string target_doc_id;
  std::string section_name;
  double distinctiveness = 0.0;
};

// Stable id derived from the relation's (source, target, sections).
std::string cluster_id_for(const RelationCandidate& c);

// Target plus up to size-1 keyword-overlap documents (overlap count desc, then
// doc_id), padded with documents sampled uniformly from the rest of the corpus.
// The sampler is seeded from (rng_seed, cluster_id).
PaperCluster build_cluster(const Document& source, const Document& target,
                           const std::vector<const Document*>& keyword_list, const Corpus& corpus,
                           std::uint64_t rng_seed, const std::string& cluster_id,
                           std::size_t cluster_size = kDefaultClusterSize);

// All in-corpus documents cited by `source`. The size is whatever the pool is.
PaperCluster citation_cluster(const Document& source, const Document& target, const Corpus& corpus,
                              const std::string& cluster_id);

using ShqaByDoc = std::map<std::string, std::vector<QaTriplet>>;

ShqaByDoc group_by_document(const std::vector<QaTriplet>& triplets);

// For each target QA: sum over QAs of the other members of (1 - cosine) at QA
// level. Returns the maximum (ties: smallest question text).
RetrievalQa select_retrieval_qa(const Document& target, const PaperCluster& cluster, const ShqaByDoc& shqa,
                                Embedder& embedder);

json cluster_to_json(const PaperCluster& c, const RetrievalQa& rqa);
PaperCluster cluster_from_json(const json& j);
RetrievalQa retrieval_qa_from_json(const json& j);

}  // namespace imqa
