#pragma once

#include <string>
#include <string_view>

namespace share {

// Git blob object id: hex SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(std::string_view content);

}  // namespace share
