#include "muse/errors.hpp"

namespace muse {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "config error";
        case ErrorKind::data: return "data error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::contract: return "contract error";
        case ErrorKind::dimension: return "dimension error";
        case ErrorKind::io: return "io error";
    }
    return "error";
}

}  // namespace muse
