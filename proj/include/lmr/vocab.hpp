#pragma once
#include <string>
#include <vector>

namespace lmr::vocab {

// Closed vocabulary shared by the generator, the trainer and the decoders.
// Token ids are stable: they are positions in the compiled-in table.
inline constexpr int EOA = 0;     // end-of-answer
inline constexpr int LATENT = 1;  // latent-slot placeholder (display only)
inline constexpr int STEP = 2;    // delimiter between reasoning steps

int size();
int id(const std::string& token);          // throws on unknown token
const std::string& token(int id);          // throws on out-of-range id
std::vector<int> ids(const std::string& space_separated);
std::string text(const std::vector<int>& ids);

int digit_id(int n);  // 0..9

}  // namespace lmr::vocab
