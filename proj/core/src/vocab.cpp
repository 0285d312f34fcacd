#include "wpcl/vocab.hpp"

namespace wpcl {

std::vector<std::string> default_vocab() {
  return {"desk",   "chair",  "television", "sofa",  "coffee table", "fruits",
          "lamp",   "bed",    "mirror",     "plant", "bookshelf",    "rug",
          "fridge", "oven",   "sink",       "piano", "wardrobe",     "clock",
          "vase",   "window"};
}

}  // namespace wpcl
